#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lvae/posterior.hpp"
#include "lvae/train.hpp"

namespace lvae {

/// Flat key=value text with dotted section prefixes; '#' starts a comment.
/// Order-preserving so serialized configs diff cleanly between runs.
class KvFile {
 public:
  static KvFile parse_text(const std::string& text);
  static KvFile load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  std::string serialize() const;
  void save(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

/// Everything a run needs; unknown keys are rejected together so a bad config
/// surfaces every mistake at once.
struct RunConfig {
  TrainConfig train;
  InferenceConfig infer;

  static RunConfig from_kv(const KvFile& kv);
  KvFile to_kv() const;  // fully resolved, suitable to write next to outputs
};

}  // namespace lvae
