#include "rksa/run_config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace rksa {

namespace {

using nlohmann::json;

/// Pops keys off a JSON object; whatever is left at the end is unknown.
class Reader {
 public:
  Reader(json object, std::string scope) : object_(std::move(object)), scope_(std::move(scope)) {
    if (!object_.is_object()) throw ConfigError(scope_ + ": expected a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(scope_ + "." + key + ": " + e.what());
    }
    object_.erase(it);
  }

  json take(const char* key) {
    auto it = object_.find(key);
    if (it == object_.end()) return json();
    json value = *it;
    object_.erase(it);
    return value;
  }

  void finish() const {
    if (!object_.empty()) throw ConfigError(scope_ + ": unknown key '" + object_.begin().key() + "'");
  }

 private:
  json object_;
  std::string scope_;
};

void read_positive(Reader& r, const char* key, std::size_t& out) {
  long long v = static_cast<long long>(out);
  r.read(key, v);
  if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
  out = static_cast<std::size_t>(v);
}

json attention_json(const AttentionOptions& a) {
  json j;
  j["stochastic"] = a.stochastic;
  j["last_row_only"] = a.last_row_only;
  j["causal"] = a.causal;
  j["fixed_omega"] = a.fixed_omega ? json(*a.fixed_omega) : json();
  j["zero_shape"] = a.zero_shape;
  return j;
}

json train_json(const TrainConfig& c) {
  json j;
  j["batch_size"] = c.batch_size;
  j["dim"] = c.dim;
  j["blocks"] = c.blocks;
  j["heads"] = c.heads;
  j["dropout"] = c.dropout;
  j["lr"] = c.lr;
  j["lambda_r"] = c.lambda_r;
  j["max_len"] = c.max_len;
  j["k_neg_train"] = c.k_neg_train;
  j["k_neg_eval"] = c.k_neg_eval;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["eval_every"] = c.eval_every;
  j["max_steps"] = c.max_steps;
  j["clip_norm"] = c.clip_norm;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["negative_exclusion"] = c.negative_exclusion == NegativeExclusion::History ? "history" : "target";
  j["eval_mode"] = to_string(c.eval_mode);
  j["eval_max_users"] = c.eval_max_users;
  j["kernel"] = {{"active", c.attention.kernel.active.to_string()},
                 {"item_variant", to_string(c.attention.kernel.item_variant)},
                 {"jitter", c.attention.kernel.jitter}};
  j["attention"] = attention_json(c.attention);
  return j;
}

void read_train(Reader& r, TrainConfig& c) {
  read_positive(r, "batch_size", c.batch_size);
  read_positive(r, "dim", c.dim);
  read_positive(r, "blocks", c.blocks);
  read_positive(r, "heads", c.heads);
  r.read("dropout", c.dropout);
  r.read("lr", c.lr);
  r.read("lambda_r", c.lambda_r);
  read_positive(r, "max_len", c.max_len);
  read_positive(r, "k_neg_train", c.k_neg_train);
  read_positive(r, "k_neg_eval", c.k_neg_eval);
  read_positive(r, "max_epochs", c.max_epochs);
  read_positive(r, "patience", c.patience);
  r.read("seed", c.seed);
  r.read("lr_decay_factor", c.lr_decay_factor);
  read_positive(r, "eval_every", c.eval_every);
  read_positive(r, "max_steps", c.max_steps);
  r.read("clip_norm", c.clip_norm);
  r.read("adam_beta1", c.adam_beta1);
  r.read("adam_beta2", c.adam_beta2);
  r.read("adam_eps", c.adam_eps);
  std::string exclusion;
  r.read("negative_exclusion", exclusion);
  if (exclusion == "history") {
    c.negative_exclusion = NegativeExclusion::History;
  } else if (exclusion == "target") {
    c.negative_exclusion = NegativeExclusion::Target;
  } else if (!exclusion.empty()) {
    throw ConfigError("negative_exclusion must be 'history' or 'target'");
  }
  std::string mode;
  r.read("eval_mode", mode);
  if (!mode.empty()) c.eval_mode = parse_attention_mode(mode);
  read_positive(r, "eval_max_users", c.eval_max_users);

  if (json kernel = r.take("kernel"); !kernel.is_null()) {
    Reader k(std::move(kernel), "kernel");
    std::string active;
    std::string variant;
    k.read("active", active);
    k.read("item_variant", variant);
    k.read("jitter", c.attention.kernel.jitter);
    k.finish();
    if (!active.empty()) c.attention.kernel.active = KernelSet::parse(active);
    if (!variant.empty()) c.attention.kernel.item_variant = parse_item_variant(variant);
  }
  if (json attention = r.take("attention"); !attention.is_null()) {
    Reader a(std::move(attention), "attention");
    a.read("stochastic", c.attention.stochastic);
    a.read("last_row_only", c.attention.last_row_only);
    a.read("causal", c.attention.causal);
    json fixed = a.take("fixed_omega");
    if (fixed.is_number()) {
      c.attention.fixed_omega = fixed.get<double>();
    } else if (!fixed.is_null()) {
      throw ConfigError("attention.fixed_omega must be a number or null");
    }
    a.read("zero_shape", c.attention.zero_shape);
    a.finish();
  }
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  RunConfig config;
  Reader r(parse(text), "config");
  read_train(r, config.train);
  r.read("dataset_name", config.dataset_name);
  std::string raw, data, out;
  r.read("raw_path", raw);
  r.read("data_dir", data);
  r.read("output_dir", out);
  config.raw_path = raw;
  config.data_dir = data;
  config.output_dir = out;
  r.read("eval_seeds", config.eval_seeds);
  r.finish();
  config.train.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return run_config_from_json(text.str());
}

std::string to_json(const RunConfig& config) {
  json j = train_json(config.train);
  j["dataset_name"] = config.dataset_name;
  j["raw_path"] = config.raw_path.string();
  j["data_dir"] = config.data_dir.string();
  j["output_dir"] = config.output_dir.string();
  j["eval_seeds"] = config.eval_seeds;
  return j.dump(2);
}

std::string train_config_json(const TrainConfig& config) { return train_json(config).dump(); }

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig config;
  Reader r(parse(text), "train_config");
  read_train(r, config);
  r.finish();
  return config;
}

std::uint64_t config_hash(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : train_config_json(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rksa
