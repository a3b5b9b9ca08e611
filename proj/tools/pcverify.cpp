// pcverify: certified robustness radii for point-cloud classifiers.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcv/certifier.hpp"
#include "pcv/errors.hpp"
#include "pcv/propagation.hpp"
#include "pcv/report.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kInternal = 1, kFormat = 2, kNoInputs = 3, kAllMisclassified = 4 };

struct RunConfig {
  std::string model_path;
  std::string input_path;
  std::string norms = "inf";
  double eps_init = 0.05;
  std::size_t max_iter = 10;
  std::string targets = "all";
  std::string report_path = "report.jsonl";
  std::string format = "jsonl";
  std::uint64_t seed = 0;
  int jobs = 1;
  bool timing = true;
  bool layer_bounds = true;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<fs::path> list_inputs(const fs::path& p) {
  if (!fs::exists(p)) throw pcv::FormatError(p.string() + ": no such file or directory");
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

pcv::MarginQuery make_query(const std::string& spec, int true_class) {
  pcv::MarginQuery q{true_class, {}};
  if (spec == "all" || spec == "untargeted") return q;
  for (const std::string& t : split(spec, ',')) {
    try {
      q.targets.push_back(std::stoi(t));
    } catch (const std::exception&) {
      throw pcv::FormatError("--targets: '" + t + "' is not a class index");
    }
  }
  return q;
}

pcv::CloudRecord verify_one(const pcv::Network& net, const pcv::PointCloud& cloud, const std::string& file,
                            pcv::Norm norm, const RunConfig& cfg, int engine_threads) {
  pcv::CloudRecord rec;
  rec.file = file;
  rec.n_points = cloud.num_points();
  rec.norm = norm;
  rec.result.norm = norm;
  const int predicted = pcv::predicted_class(pcv::forward_eval(net, cloud));
  rec.predicted_class = predicted;
  if (cloud.label && *cloud.label != predicted) {
    rec.status = "misclassified";
    rec.message = "predicted class " + std::to_string(predicted) + ", expected " + std::to_string(*cloud.label);
    return rec;
  }
  pcv::SearchOptions opts;
  opts.eps_init = cfg.eps_init;
  opts.max_iter = cfg.max_iter;
  opts.engine.threads = engine_threads;
  const pcv::MarginQuery query = make_query(cfg.targets, predicted);
  rec.result = pcv::certified_radius(net, cloud, norm, query, opts);
  if (cfg.targets == "untargeted") {
    const double m = rec.result.min_margin();
    int arg = rec.result.per_target_sigma.begin()->first;
    for (const auto& [t, s] : rec.result.per_target_sigma)
      if (s == m) { arg = t; break; }
    rec.result.per_target_sigma = {{arg, m}};
  }
  double total = 0.0;
  for (auto& step : rec.result.search_trace) {
    if (!cfg.timing) step.seconds = 0.0;
    total += step.seconds;
  }
  rec.seconds_per_iter = rec.result.iterations_used ? total / static_cast<double>(rec.result.iterations_used) : 0.0;
  if (cfg.layer_bounds) {
    pcv::BoundPropagator engine(net, pcv::PerturbationSpec{cloud, norm, cfg.eps_init}, {engine_threads});
    engine.run();
    rec.layer_bounds = engine.all_bounds();
  }
  return rec;
}

int run(const RunConfig& cfg) {
  const pcv::ReportFormat format = pcv::parse_report_format(cfg.format);
  std::vector<pcv::Norm> norms;
  for (const std::string& n : split(cfg.norms, ',')) norms.push_back(pcv::parse_norm(n));
  if (norms.empty()) throw pcv::FormatError("--norm: no norm given");
  if (!(cfg.eps_init > 0.0)) throw pcv::FormatError("--eps-init must be > 0");
  if (cfg.max_iter < 1) throw pcv::FormatError("--max-iter must be >= 1");

  const pcv::Network net = pcv::load_network(cfg.model_path);
  const std::vector<fs::path> files = list_inputs(cfg.input_path);
  if (files.empty()) {
    pcv::write_report({}, format, cfg.report_path);
    std::cerr << "pcverify: " << cfg.input_path << ": no inputs\n";
    return kNoInputs;
  }
  std::vector<pcv::PointCloud> clouds;
  for (const fs::path& f : files) clouds.push_back(pcv::load_cloud(f));

  // One task per (cloud, norm); results land in input order.
  const std::size_t tasks = clouds.size() * norms.size();
  std::vector<pcv::CloudRecord> records(tasks);
  const int jobs = std::max(cfg.jobs, 1);
  const int engine_threads = tasks > 1 ? 1 : jobs;
  std::vector<std::string> errors(tasks);
  std::vector<bool> format_errors(tasks, false);
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(tasks); ++k) {
    const auto i = static_cast<std::size_t>(k) / norms.size();
    const auto n = static_cast<std::size_t>(k) % norms.size();
    try {
      records[static_cast<std::size_t>(k)] = verify_one(net, clouds[i], files[i].string(), norms[n], cfg, engine_threads);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(k)] = files[i].string() + ": " + e.what();
      format_errors[static_cast<std::size_t>(k)] =
          dynamic_cast<const pcv::FormatError*>(&e) || dynamic_cast<const pcv::ShapeError*>(&e);
    }
  }
  for (std::size_t k = 0; k < tasks; ++k) {
    if (errors[k].empty()) continue;
    if (format_errors[k]) throw pcv::FormatError(errors[k]);
    throw std::runtime_error(errors[k]);
  }

  pcv::write_report(records, format, cfg.report_path);
  const bool all_skipped = std::none_of(records.begin(), records.end(), [](const auto& r) { return r.ok(); });
  for (const auto& r : records)
    if (!r.ok()) std::cerr << "pcverify: skipped " << r.file << " (" << r.message << ")\n";
  return all_skipped ? kAllMisclassified : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified robustness radii for point-cloud classifiers"};
  RunConfig cfg;
  std::string timing = "on", layer_bounds = "on";
  app.add_option("--model", cfg.model_path, "Model JSON")->required();
  app.add_option("--input", cfg.input_path, "Point-cloud JSON file or directory of them")->required();
  app.add_option("--norm", cfg.norms, "Perturbation norm(s): 1, 2, inf; comma separated")->capture_default_str();
  app.add_option("--eps-init", cfg.eps_init, "Initial radius of the search")->capture_default_str();
  app.add_option("--max-iter", cfg.max_iter, "Bisection steps")->capture_default_str();
  app.add_option("--targets", cfg.targets, "all, untargeted, or a comma-separated class list")->capture_default_str();
  app.add_option("--report", cfg.report_path, "Report path")->capture_default_str();
  app.add_option("--format", cfg.format, "jsonl or csv")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Seed recorded with the run")->capture_default_str();
  app.add_option("--jobs", cfg.jobs, "Worker threads")->capture_default_str();
  app.add_option("--timing", timing, "on: wall-clock per iteration; off: zeros")
      ->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  app.add_option("--layer-bounds", layer_bounds, "Include per-layer intervals at eps-init in jsonl")
      ->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFormat;
  }
  cfg.timing = timing == "on";
  cfg.layer_bounds = layer_bounds == "on";

  try {
    return run(cfg);
  } catch (const pcv::FormatError& e) {
    std::cerr << "pcverify: " << e.what() << '\n';
    return kFormat;
  } catch (const pcv::ShapeError& e) {
    std::cerr << "pcverify: " << e.what() << '\n';
    return kFormat;
  } catch (const std::exception& e) {
    std::cerr << "pcverify: " << e.what() << '\n';
    return kInternal;
  }
}
