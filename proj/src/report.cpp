#include "pcv/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "pcv/errors.hpp"

namespace pcv {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or(const json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ReportFormat parse_report_format(std::string_view text) {
  if (text == "jsonl") return ReportFormat::JsonLines;
  if (text == "csv") return ReportFormat::Csv;
  throw FormatError("unknown report format '" + std::string(text) + "' (expected jsonl or csv)");
}

std::vector<NormSummary> summarize(const std::vector<CloudRecord>& records) {
  std::vector<NormSummary> out;
  auto slot = [&](Norm p) -> NormSummary& {
    for (auto& s : out)
      if (s.norm == p) return s;
    out.push_back(NormSummary{p});
    return out.back();
  };
  for (const CloudRecord& r : records) {
    NormSummary& s = slot(r.norm);
    if (!r.ok()) {
      ++s.skipped;
      continue;
    }
    ++s.certified;
    s.average_certified_eps += r.result.certified_epsilon;
    s.average_seconds_per_iter += r.seconds_per_iter;
  }
  for (auto& s : out)
    if (s.certified > 0) {
      s.average_certified_eps /= static_cast<double>(s.certified);
      s.average_seconds_per_iter /= static_cast<double>(s.certified);
    }
  return out;
}

json record_to_json(const CloudRecord& r) {
  json j;
  j["file"] = r.file;
  j["n_points"] = r.n_points;
  j["norm"] = to_string(r.norm);
  j["status"] = r.status;
  if (!r.message.empty()) j["message"] = r.message;
  j["predicted_class"] = r.predicted_class ? json(*r.predicted_class) : json(nullptr);
  if (!r.ok()) return j;

  j["true_class"] = r.result.true_class;
  j["certified_eps"] = r.result.certified_epsilon;
  j["min_margin"] = number(r.result.min_margin());
  json sigma = json::object();
  for (const auto& [t, s] : r.result.per_target_sigma) sigma[std::to_string(t)] = number(s);
  j["per_target_sigma"] = sigma;
  json trace = json::array();
  for (const SearchStep& s : r.result.search_trace)
    trace.push_back({{"eps", s.epsilon}, {"verified", s.verified}, {"seconds", s.seconds}});
  j["search_trace"] = trace;
  j["iterations"] = r.result.iterations_used;
  j["seconds_per_iter"] = r.seconds_per_iter;
  json layers = json::array();
  for (std::size_t i = 0; i < r.layer_bounds.size(); ++i)
    layers.push_back({{"index", i}, {"lower", to_vec(r.layer_bounds[i].lower)}, {"upper", to_vec(r.layer_bounds[i].upper)}});
  j["layer_bounds"] = layers;
  return j;
}

CloudRecord record_from_json(const json& j) {
  try {
    CloudRecord r;
    r.file = j.at("file").get<std::string>();
    r.n_points = j.at("n_points").get<std::size_t>();
    r.norm = parse_norm(j.at("norm").get<std::string>());
    r.status = j.at("status").get<std::string>();
    r.message = j.value("message", "");
    if (!j.at("predicted_class").is_null()) r.predicted_class = j["predicted_class"].get<int>();
    r.result.norm = r.norm;
    if (!r.ok()) return r;

    r.result.true_class = j.at("true_class").get<int>();
    r.result.certified_epsilon = j.at("certified_eps").get<double>();
    for (const auto& [k, v] : j.at("per_target_sigma").items())
      r.result.per_target_sigma[std::stoi(k)] = number_or(v, std::nan(""));
    for (const json& s : j.at("search_trace"))
      r.result.search_trace.push_back({s.at("eps").get<double>(), s.at("verified").get<bool>(), s.at("seconds").get<double>()});
    r.result.iterations_used = j.at("iterations").get<std::size_t>();
    r.seconds_per_iter = j.at("seconds_per_iter").get<double>();
    for (const json& l : j.at("layer_bounds"))
      r.layer_bounds.push_back({from_vec(l.at("lower").get<std::vector<double>>()),
                                from_vec(l.at("upper").get<std::vector<double>>())});
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report record: ") + e.what());
  }
}

void emit_report(const std::vector<CloudRecord>& records, ReportFormat format, std::ostream& out) {
  if (format == ReportFormat::Csv) {
    out << "file,n_points,norm,certified_eps,min_margin,seconds_per_iter,iterations\n";
    for (const CloudRecord& r : records) {
      if (!r.ok()) continue;
      out << csv_field(r.file) << ',' << r.n_points << ',' << to_string(r.norm) << ','
          << csv_number(r.result.certified_epsilon) << ',' << csv_number(r.result.min_margin()) << ','
          << csv_number(r.seconds_per_iter) << ',' << r.result.iterations_used << '\n';
    }
    return;
  }
  for (const CloudRecord& r : records) out << record_to_json(r).dump() << '\n';
  json summary = json::array();
  for (const NormSummary& s : summarize(records))
    summary.push_back({{"norm", to_string(s.norm)},
                       {"certified", s.certified},
                       {"skipped", s.skipped},
                       {"average_certified_eps", s.average_certified_eps},
                       {"average_seconds_per_iter", s.average_seconds_per_iter}});
  out << json{{"summary", summary}}.dump() << '\n';
}

void write_report(const std::vector<CloudRecord>& records, ReportFormat format,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot open report for writing");
  emit_report(records, format, out);
  if (!out) throw FormatError(path.string() + ": write failed");
}

std::vector<CloudRecord> parse_jsonl(std::istream& in) {
  std::vector<CloudRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("report line " + std::to_string(n) + ": " + e.what());
    }
    if (j.contains("summary")) continue;
    out.push_back(record_from_json(j));
  }
  return out;
}

}  // namespace pcv
