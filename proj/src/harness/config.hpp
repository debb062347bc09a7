#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attacks/attacks.hpp"
#include "data/dataset.hpp"
#include "defense/transform.hpp"
#include "nn/train.hpp"

namespace advt::harness {

// Sectioned key=value text. '#' and ';' start comments; '[section]' lines
// open sections; attack suite entries use repeated '[attack:<name>]'
// sections. Unknown keys are config errors (reported with section.key path).
struct RawConfig {
  // section -> key -> value, attack sections kept in file order
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> attack_sections;

  static RawConfig parse_file(const std::string& path);
  static RawConfig parse_text(const std::string& text, const std::string& origin);
};

enum class PretrainMode { Standard, Adversarial, Untrained };

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx
  // synthetic
  std::string kind = "gaussian-blobs";
  int train_count = 2000;
  int test_count = 400;
  int classes = 10;
  int image_side = 28;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  int limit_train = 0;  // 0 = all
  int limit_test = 0;
  // examples actually attacked (prefix of the test set; 0 = all)
  int eval_count = 200;
};

struct FbConfig {
  std::string arch = "mlp-64";
  PretrainMode pretrain = PretrainMode::Standard;
  nn::SGDConfig sgd{0.1, 0.9, 3, 64};
  nn::PgdParams adv{0.3, 7, 0.075, true};
};

struct ExperimentConfig {
  uint64_t seed = 42;
  std::string out_dir = "out";
  int threads = 0;  // 0 = hardware default

  DataConfig data;
  std::string fa_arch = "conv-small";
  nn::SGDConfig train{0.1, 0.9, 3, 64};
  FbConfig fb;
  defense::TransformConfig transform;
  bool eval_resample = false;
  bool time_adversarial_baseline = false;
  nn::PgdParams fa_adv_baseline{0.3, 7, 0.075, true};  // for the timing comparison

  std::vector<attacks::AttackSpec> suite;

  static ExperimentConfig from_raw(const RawConfig& raw);
  static ExperimentConfig load(const std::string& path);

  // Canonical flat view echoed into reports (sorted by key).
  std::map<std::string, std::string> echo() const;
};

// Named model architectures used by configs.
nn::ModelSpec make_arch(const std::string& name, nn::InputShape input, int classes);

}  // namespace advt::harness
