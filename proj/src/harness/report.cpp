#include "harness/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "core/error.hpp"

namespace advt::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

void emit_string_map(std::ostringstream& os, const std::map<std::string, std::string>& m,
                     const std::string& indent) {
  os << "{";
  bool first = true;
  for (const auto& [k, v] : m) {
    os << (first ? "\n" : ",\n") << indent << "  \"" << escape(k) << "\": \"" << escape(v)
       << "\"";
    first = false;
  }
  if (!first) os << "\n" << indent;
  os << "}";
}

}  // namespace

void EvalReport::validate() const {
  auto in_range = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!in_range(standard_accuracy)) throw Error("report: standard accuracy outside [0,1]");
  if (status == "complete") {
    if (attacks.empty()) throw Error("report: no attack entries");
    double min_acc = attacks.front().second;
    std::string min_name = attacks.front().first;
    for (const auto& [n, a] : attacks) {
      if (!in_range(a)) throw Error("report: accuracy for '" + n + "' outside [0,1]");
      if (a < min_acc || (a == min_acc && n < min_name)) {
        min_acc = a;
        min_name = n;
      }
    }
    if (format_g6(min_acc) != format_g6(worst_case))
      throw Error("report: worst_case " + format_g6(worst_case) +
                  " does not equal the per-attack minimum " + format_g6(min_acc));
    if (best_attack != min_name)
      throw Error("report: best_attack '" + best_attack + "' is not the argmin '" + min_name +
                  "'");
  }
}

std::string report_to_json(const EvalReport& r) {
  std::ostringstream os;
  os << "{\n";
  os << "  \"artifacts\": ";
  emit_string_map(os, r.artifacts, "  ");
  os << ",\n";

  os << "  \"attacks\": {";
  {
    // sorted by attack name for canonical output
    std::map<std::string, double> sorted(r.attacks.begin(), r.attacks.end());
    bool first = true;
    for (const auto& [k, v] : sorted) {
      os << (first ? "\n" : ",\n") << "    \"" << escape(k) << "\": " << format_g6(v);
      first = false;
    }
    if (!first) os << "\n  ";
  }
  os << "},\n";

  os << "  \"best_attack\": \"" << escape(r.best_attack) << "\",\n";
  if (r.has_bpda)
    os << "  \"best_bpda_attack\": \"" << escape(r.best_bpda_attack) << "\",\n";
  os << "  \"config\": ";
  emit_string_map(os, r.config_echo, "  ");
  os << ",\n";
  if (!r.curves.empty()) {
    os << "  \"curves\": ";
    emit_string_map(os, r.curves, "  ");
    os << ",\n";
  }
  if (!r.failed_phase.empty())
    os << "  \"failed_phase\": \"" << escape(r.failed_phase) << "\",\n";
  os << "  \"schema_version\": 1,\n";
  os << "  \"standard_accuracy\": " << format_g6(r.standard_accuracy) << ",\n";
  os << "  \"status\": \"" << escape(r.status) << "\",\n";
  os << "  \"transform_eval_policy\": \"" << escape(r.eval_policy) << "\",\n";
  os << "  \"worst_case_accuracy\": " << format_g6(r.worst_case);
  if (r.has_bpda)
    os << ",\n  \"worst_case_bpda_accuracy\": " << format_g6(r.worst_case_bpda);
  os << "\n}\n";
  return os.str();
}

void write_report(const EvalReport& r, const std::string& dir) {
  r.validate();
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "report.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write report.json under " + dir);
    out << report_to_json(r);
  }
  {
    json t;
    for (const auto& [k, v] : r.phase_seconds) t[k] = v;
    if (r.phase_seconds.count("train_defense_seconds") &&
        r.phase_seconds.count("adversarial_train_seconds")) {
      double d = r.phase_seconds.at("train_defense_seconds");
      if (d > 0.0)
        t["adversarial_over_defense_ratio"] = r.phase_seconds.at("adversarial_train_seconds") / d;
    }
    std::ofstream out(fs::path(dir) / "timings.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write timings.json under " + dir);
    out << t.dump(2) << "\n";
  }
}

EvalReport parse_report_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw FormatError(std::string("report.json: ") + e.what());
  }
  EvalReport r;
  try {
    r.standard_accuracy = j.at("standard_accuracy").get<double>();
    for (const auto& [k, v] : j.at("attacks").items()) r.attacks.emplace_back(k, v.get<double>());
    r.worst_case = j.at("worst_case_accuracy").get<double>();
    r.best_attack = j.at("best_attack").get<std::string>();
    if (j.contains("worst_case_bpda_accuracy")) {
      r.has_bpda = true;
      r.worst_case_bpda = j.at("worst_case_bpda_accuracy").get<double>();
      r.best_bpda_attack = j.at("best_bpda_attack").get<std::string>();
    }
    for (const auto& [k, v] : j.at("config").items()) r.config_echo[k] = v.get<std::string>();
    for (const auto& [k, v] : j.at("artifacts").items()) r.artifacts[k] = v.get<std::string>();
    if (j.contains("curves"))
      for (const auto& [k, v] : j.at("curves").items()) r.curves[k] = v.get<std::string>();
    r.eval_policy = j.at("transform_eval_policy").get<std::string>();
    r.status = j.at("status").get<std::string>();
    if (j.contains("failed_phase")) r.failed_phase = j.at("failed_phase").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("report.json field error: ") + e.what());
  }
  return r;
}

EvalReport load_report(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "report.json", std::ios::binary);
  if (!in) throw IoError("no report.json under " + dir);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report_json(ss.str());
}

}  // namespace advt::harness
