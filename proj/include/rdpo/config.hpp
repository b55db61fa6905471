#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rdpo/dpo.hpp"
#include "rdpo/dynamics.hpp"
#include "rdpo/flow_model.hpp"

namespace rdpo::cfg {

struct KeySpec {
  const char* name;
  const char* def;
  const char* doc;
};
// Every configuration key with its default; drives parsing, --help output and
// the canonical form behind the config hash.
const std::vector<KeySpec>& key_specs();

class RunConfig {
 public:
  static RunConfig defaults();
  // Parses "key = value" lines ('#' comments allowed); unknown keys are an
  // error, as are malformed or out-of-range values.
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);  // validates key
  const std::string& get(const std::string& key) const;

  // Sorted key=value lines; the hash is over this form, so key order in the
  // source file never matters.
  std::string canonical() const;
  uint64_t hash() const;

  // Typed views (validated on access).
  uint64_t seed() const;

  dyn::DatasetSpec dataset_spec() const;
  flow::ModelShape model_shape() const;
  int total_steps() const;
  flow::TrainOptions train_options() const;
  dpo::SftOptions sft_options() const;
  dpo::ProgressiveOptions progressive_options() const;
  std::vector<int> pairgen_steps() const;
  int pairgen_k() const;
  int pairgen_count() const;
  std::vector<int> audit_buckets() const;
  int audit_count_per_bucket() const;
  int eval_conditions() const;
  int eval_samples() const;
  int reward_draws() const;

  void validate() const;  // full cross-field check

 private:
  std::map<std::string, std::string> values_;
  int64_t get_int(const std::string& key, int64_t lo, int64_t hi) const;
  double get_double(const std::string& key, double lo, double hi) const;
  bool get_bool(const std::string& key) const;
};

}  // namespace rdpo::cfg
