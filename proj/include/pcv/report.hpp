#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcv/bounds.hpp"
#include "pcv/certifier.hpp"

namespace pcv {

enum class ReportFormat { JsonLines, Csv };

ReportFormat parse_report_format(std::string_view text);

/// Outcome for one (cloud, norm) pair.
struct CloudRecord {
  std::string file;
  std::size_t n_points = 0;
  Norm norm = Norm::Linf;
  std::string status = "ok";  // ok | misclassified | error
  std::string message;
  std::optional<int> predicted_class;
  CertificationResult result;
  double seconds_per_iter = 0.0;
  std::vector<ConcreteBounds> layer_bounds;  // at eps_init, graph index order

  bool ok() const { return status == "ok"; }
};

struct NormSummary {
  Norm norm = Norm::Linf;
  std::size_t certified = 0;
  std::size_t skipped = 0;
  double average_certified_eps = 0.0;
  double average_seconds_per_iter = 0.0;
};

/// Per-norm averages over the records with status ok, in first-seen norm order.
std::vector<NormSummary> summarize(const std::vector<CloudRecord>& records);

nlohmann::json record_to_json(const CloudRecord& r);
CloudRecord record_from_json(const nlohmann::json& j);

/// JSON lines: one record per line, then one summary line.
/// CSV: header plus one row per certified record.
void emit_report(const std::vector<CloudRecord>& records, ReportFormat format, std::ostream& out);
void write_report(const std::vector<CloudRecord>& records, ReportFormat format,
                  const std::filesystem::path& path);

/// Records of a JSON-lines report; the summary line is skipped.
std::vector<CloudRecord> parse_jsonl(std::istream& in);

}  // namespace pcv
