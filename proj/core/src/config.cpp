#include "lvae/config.hpp"

#include <fstream>
#include <sstream>

namespace lvae {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

KvFile KvFile::parse_text(const std::string& text) {
  KvFile kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    check(eq != std::string::npos,
          "config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    check(!key.empty(), "config line " + std::to_string(lineno) + " has an empty key");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KvFile KvFile::load(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

void KvFile::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items_)
    if (k == key) {
      v = value;
      return;
    }
  items_.emplace_back(key, value);
}

bool KvFile::has(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return true;
  return false;
}

const std::string& KvFile::get(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return v;
  fail("config key '" + key + "' is missing");
}

std::string KvFile::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

std::string KvFile::serialize() const {
  std::string out;
  for (const auto& [k, v] : items_) out += k + "=" + v + "\n";
  return out;
}

void KvFile::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write config '" + path + "'");
  out << serialize();
  check(out.good(), "short write to '" + path + "'");
}

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int r = std::stoi(v, &used);
    check(used == v.size(), "");
    return r;
  } catch (...) {
    fail("config key '" + key + "': '" + v + "' is not an integer");
  }
}

float to_float(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const float r = std::stof(v, &used);
    check(used == v.size(), "");
    return r;
  } catch (...) {
    fail("config key '" + key + "': '" + v + "' is not a number");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t r = std::stoull(v, &used);
    check(used == v.size(), "");
    return r;
  } catch (...) {
    fail("config key '" + key + "': '" + v + "' is not an unsigned integer");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace

RunConfig RunConfig::from_kv(const KvFile& kv) {
  static const char* known[] = {
      "model.variant",     "model.preset",      "train.batch",      "train.lr",
      "train.epochs",      "train.lambda_g",    "train.recon_weight", "train.seed",
      "train.augment",     "train.val_fraction", "infer.lambda",     "infer.steps",
      "infer.lr",          "infer.restarts",    "infer.seed",       "infer.warm_start"};
  std::string unknown;
  for (const auto& [k, v] : kv.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  check(unknown.empty(), "unknown config keys: " + unknown);

  RunConfig rc;
  if (kv.has("model.variant")) rc.train.model = model_kind_from_name(kv.get("model.variant"));
  if (kv.has("model.preset")) rc.train.preset = kv.get("model.preset");
  if (kv.has("train.batch")) rc.train.batch = to_int("train.batch", kv.get("train.batch"));
  if (kv.has("train.lr")) rc.train.lr = to_float("train.lr", kv.get("train.lr"));
  if (kv.has("train.epochs")) rc.train.epochs = to_int("train.epochs", kv.get("train.epochs"));
  if (kv.has("train.lambda_g"))
    rc.train.lambda_g = to_float("train.lambda_g", kv.get("train.lambda_g"));
  if (kv.has("train.recon_weight"))
    rc.train.recon_weight = to_float("train.recon_weight", kv.get("train.recon_weight"));
  if (kv.has("train.seed")) rc.train.seed = to_u64("train.seed", kv.get("train.seed"));
  if (kv.has("train.augment"))
    rc.train.augment = augment_profile_from_name(kv.get("train.augment"));
  if (kv.has("train.val_fraction"))
    rc.train.val_fraction = to_float("train.val_fraction", kv.get("train.val_fraction"));
  if (kv.has("infer.lambda")) rc.infer.lambda = to_float("infer.lambda", kv.get("infer.lambda"));
  if (kv.has("infer.steps")) rc.infer.steps = to_int("infer.steps", kv.get("infer.steps"));
  if (kv.has("infer.lr")) rc.infer.lr = to_float("infer.lr", kv.get("infer.lr"));
  if (kv.has("infer.restarts"))
    rc.infer.restarts = to_int("infer.restarts", kv.get("infer.restarts"));
  if (kv.has("infer.seed")) rc.infer.seed = to_u64("infer.seed", kv.get("infer.seed"));
  if (kv.has("infer.warm_start"))
    rc.infer.warm_start = to_bool("infer.warm_start", kv.get("infer.warm_start"));
  rc.train.validate();
  rc.infer.validate();
  return rc;
}

KvFile RunConfig::to_kv() const {
  KvFile kv;
  char buf[32];
  auto putf = [&](const std::string& k, double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    kv.set(k, buf);
  };
  kv.set("model.variant", model_kind_name(train.model));
  kv.set("model.preset", train.preset);
  kv.set("train.batch", std::to_string(train.batch));
  putf("train.lr", train.lr);
  kv.set("train.epochs", std::to_string(train.epochs));
  putf("train.lambda_g", train.lambda_g);
  putf("train.recon_weight", train.recon_weight);
  kv.set("train.seed", std::to_string(train.seed));
  kv.set("train.augment", augment_profile_name(train.augment));
  putf("train.val_fraction", train.val_fraction);
  putf("infer.lambda", infer.lambda);
  kv.set("infer.steps", std::to_string(infer.steps));
  putf("infer.lr", infer.lr);
  kv.set("infer.restarts", std::to_string(infer.restarts));
  kv.set("infer.seed", std::to_string(infer.seed));
  kv.set("infer.warm_start", infer.warm_start ? "true" : "false");
  return kv;
}

}  // namespace lvae
