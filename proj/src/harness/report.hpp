#pragma once

#include <map>
#include <string>
#include <vector>

namespace advt::harness {

struct EvalReport {
  double standard_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> attacks;  // name -> robust accuracy
  double worst_case = 0.0;
  std::string best_attack;
  bool has_bpda = false;
  double worst_case_bpda = 0.0;
  std::string best_bpda_attack;

  std::map<std::string, std::string> config_echo;
  std::map<std::string, std::string> artifacts;  // digests of inputs/outputs
  std::string eval_policy;
  std::map<std::string, std::string> curves;  // sweep parameter -> csv path

  std::string status = "complete";  // complete | partial
  std::string failed_phase;

  // wall clock, kept out of the canonical report so reruns diff clean
  std::map<std::string, double> phase_seconds;

  void validate() const;  // worst_case == min(per-attack), accuracies in [0,1]
};

// Canonical form: sorted keys, 6-significant-digit floats, LF endings.
// Byte-identical across reruns of the same configuration.
std::string report_to_json(const EvalReport& r);

// report.json (canonical) plus timings.json (wall clock, not canonical).
void write_report(const EvalReport& r, const std::string& dir);

EvalReport parse_report_json(const std::string& text);
EvalReport load_report(const std::string& dir);

// Formats a double exactly the way the canonical writer does.
std::string format_g6(double v);

}  // namespace advt::harness
