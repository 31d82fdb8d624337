#include "dslab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "dslab/tensor.hpp"

namespace dslab {

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

struct Group {
  std::string dataset, arch, method;
  std::vector<double> accuracy;
  std::vector<double> steps;  // converged runs only
  std::size_t n = 0;
};

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open report file " + path.string());
  return out;
}

// Glyph count, not byte count, so the dash placeholder lines up.
std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
  return n;
}

void write_table(const std::filesystem::path& path,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], display_width(row[c]));
    }
  }
  std::ofstream out = open_out(path);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      std::string cell = rows[r][c];
      cell.append(width[c] - display_width(cell), ' ');
      line += cell;
      if (c + 1 < rows[r].size()) line += "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
}

}  // namespace

StatsReport build_report(const std::vector<RunSummary>& runs,
                         const std::string& baseline) {
  std::vector<Group> groups;
  std::map<std::string, std::size_t> index;
  for (const RunSummary& run : runs) {
    const std::string key = run.dataset + "\x1f" + run.arch + "\x1f" + run.method;
    auto [it, fresh] = index.emplace(key, groups.size());
    if (fresh) {
      groups.push_back({run.dataset, run.arch, run.method, {}, {}, 0});
    }
    Group& g = groups[it->second];
    ++g.n;
    g.accuracy.push_back(run.final_val_accuracy);
    if (run.steps_to_threshold) {
      g.steps.push_back(static_cast<double>(*run.steps_to_threshold));
    }
  }

  StatsReport report;
  report.baseline = baseline;
  for (const Group& g : groups) {
    MethodRow row;
    row.dataset = g.dataset;
    row.arch = g.arch;
    row.method = g.method;
    row.n = g.n;
    row.accuracy = aggregate(g.accuracy);
    row.converged = g.steps.size();
    if (g.steps.size() == g.n) row.steps = aggregate(g.steps);

    if (g.method != baseline) {
      const Group* base = nullptr;
      for (const Group& other : groups) {
        if (other.method == baseline && other.dataset == g.dataset &&
            other.arch == g.arch) {
          base = &other;
        }
      }
      const bool base_full = base && base->steps.size() == base->n;
      const bool self_full = g.steps.size() == g.n;
      if (base_full && self_full && base->steps.size() >= 2 &&
          g.steps.size() >= 2) {
        row.vs_baseline = welch_t(base->steps, g.steps);
        row.effect_size = cohens_d(base->steps, g.steps);
      }
      if (base_full && self_full && !base->steps.empty()) {
        const double base_mean = aggregate(base->steps).mean;
        row.speedup_pct = (base_mean - row.steps->mean) / base_mean * 100.0;
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

void render_report(const StatsReport& report,
                   const std::vector<RunSummary>& runs,
                   const std::vector<MethodSeries>& series,
                   const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const std::string dash = "—";

  std::vector<std::vector<std::string>> table;
  table.push_back({"dataset", "arch", "method", "n", "accuracy",
                   "steps to threshold", "t", "p", "d", "speedup %"});
  for (const MethodRow& row : report.rows) {
    std::vector<std::string> cells;
    cells.push_back(row.dataset);
    cells.push_back(row.arch);
    cells.push_back(row.method);
    cells.push_back(std::to_string(row.n));
    cells.push_back(fmt_fixed(row.accuracy.mean, 2) + " ± " +
                    fmt_fixed(row.accuracy.stddev, 2));
    if (row.steps) {
      cells.push_back(fmt_fixed(row.steps->mean, 0) + " ± " +
                      fmt_fixed(row.steps->stddev, 0));
    } else {
      cells.push_back(dash + " (" + std::to_string(row.converged) + "/" +
                      std::to_string(row.n) + " converged)");
    }
    cells.push_back(row.vs_baseline ? fmt_fixed(row.vs_baseline->t, 4) : dash);
    cells.push_back(row.vs_baseline ? fmt_fixed(row.vs_baseline->p, 4) : dash);
    cells.push_back(row.effect_size ? fmt_fixed(*row.effect_size, 2) : dash);
    cells.push_back(row.speedup_pct ? fmt_fixed(*row.speedup_pct, 1) : dash);
    table.push_back(std::move(cells));
  }
  write_table(dir / "results.txt", table);

  {
    std::ofstream csv = open_out(dir / "results.csv");
    csv << "dataset,arch,method,n,converged,acc_mean,acc_std,steps_mean,"
           "steps_std,welch_t,welch_dof,p_value,cohens_d,speedup_pct\n";
    for (const MethodRow& row : report.rows) {
      csv << row.dataset << ',' << row.arch << ',' << row.method << ','
          << row.n << ',' << row.converged << ','
          << fmt_g17(row.accuracy.mean) << ',' << fmt_g17(row.accuracy.stddev)
          << ',';
      csv << (row.steps ? fmt_g17(row.steps->mean) : "") << ','
          << (row.steps ? fmt_g17(row.steps->stddev) : "") << ',';
      csv << (row.vs_baseline ? fmt_g17(row.vs_baseline->t) : "") << ','
          << (row.vs_baseline ? fmt_g17(row.vs_baseline->dof) : "") << ','
          << (row.vs_baseline ? fmt_g17(row.vs_baseline->p) : "") << ',';
      csv << (row.effect_size ? fmt_g17(*row.effect_size) : "") << ','
          << (row.speedup_pct ? fmt_g17(*row.speedup_pct) : "") << '\n';
    }
  }

  {
    std::ofstream csv = open_out(dir / "per_seed.csv");
    csv << "dataset,arch,method,seed,steps_to_threshold,final_val_accuracy,"
           "wall_time_sec\n";
    for (const RunSummary& run : runs) {
      csv << run.dataset << ',' << run.arch << ',' << run.method << ','
          << run.seed << ',';
      if (run.steps_to_threshold) csv << *run.steps_to_threshold;
      csv << ',' << fmt_g17(run.final_val_accuracy) << ','
          << fmt_g17(run.wall_time_sec) << '\n';
    }
  }

  for (const MethodSeries& s : series) {
    std::ofstream csv = open_out(dir / ("series_" + s.method + ".csv"));
    const std::size_t heads =
        s.points.empty() ? 0 : s.points.front().aux_w_norm.size();
    csv << "step,grad_ratio";
    for (std::size_t k = 1; k <= heads; ++k) csv << ",aux_w_norm_" << k;
    csv << '\n';
    for (const SeriesPoint& pt : s.points) {
      csv << pt.step << ',' << fmt_g17(pt.grad_ratio);
      for (double w : pt.aux_w_norm) csv << ',' << fmt_g17(w);
      csv << '\n';
    }
  }
}

}  // namespace dslab
