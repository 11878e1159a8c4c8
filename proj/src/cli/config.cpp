#include "cqcim/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cqcim/errors.hpp"
#include "json.hpp"

namespace cqcim {

namespace {

using nlohmann::json;

const std::set<std::string, std::less<>> kKeys = {
    "embeddings", "paired_views", "out",          "loss_curve",       "dim",
    "precision",  "quantizer",    "init",         "device",           "epochs",
    "batch_size", "learning_rate", "adam_beta1",  "adam_beta2",       "adam_eps",
    "seed",       "sigma_g",      "dropout_rate_pos", "dropout_rate_neg", "pair_mode",
    "temperature", "lambda_mse"};

[[noreturn]] void field_error(std::string_view key, std::string_view expected) {
  throw UsageError("config: field '" + std::string(key) + "': expected " + std::string(expected));
}

std::string get_string(const json& j, std::string_view key) {
  if (!j.is_string()) field_error(key, "a string");
  return j.get<std::string>();
}

double get_number(const json& j, std::string_view key) {
  if (!j.is_number()) field_error(key, "a number");
  return j.get<double>();
}

std::uint64_t get_unsigned(const json& j, std::string_view key) {
  if (!j.is_number_unsigned()) field_error(key, "a non-negative integer");
  return j.get<std::uint64_t>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

TrainSettings parse_train_settings(std::string_view json_text,
                                   const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw UsageError("config: top level must be a JSON object");
  for (const auto& [key, value] : doc.items())
    if (!kKeys.contains(key)) throw UsageError("config: unknown key '" + key + "'");

  TrainSettings s;
  if (!doc.contains("embeddings")) throw UsageError("config: missing required key 'embeddings'");
  for (const auto& [key, v] : doc.items()) {
    if (key == "embeddings") s.embeddings = resolve(base_dir, get_string(v, key));
    else if (key == "paired_views") s.paired_views = resolve(base_dir, get_string(v, key));
    else if (key == "out") s.out = resolve(base_dir, get_string(v, key));
    else if (key == "loss_curve") s.loss_curve = resolve(base_dir, get_string(v, key));
    else if (key == "dim") s.dim = get_unsigned(v, key);
    else if (key == "precision") {
      try {
        s.precision = parse_precision(get_string(v, key));
      } catch (const Error& e) {
        throw UsageError(std::string("config: field 'precision': ") + e.what());
      }
    } else if (key == "quantizer") {
      const auto q = get_string(v, key);
      if (q == "n2uq") s.learned_quantizer = true;
      else if (q == "ste") s.learned_quantizer = false;
      else field_error(key, "\"n2uq\" or \"ste\"");
    } else if (key == "init") {
      const auto m = get_string(v, key);
      if (m == "pca") s.init = InitMode::pca;
      else if (m == "random") s.init = InitMode::random;
      else field_error(key, "\"pca\" or \"random\"");
    } else if (key == "device") s.device = get_string(v, key);
    else if (key == "epochs") s.train.epochs = get_unsigned(v, key);
    else if (key == "batch_size") s.train.batch_size = get_unsigned(v, key);
    else if (key == "learning_rate") s.train.learning_rate = get_number(v, key);
    else if (key == "adam_beta1") s.train.adam_beta1 = get_number(v, key);
    else if (key == "adam_beta2") s.train.adam_beta2 = get_number(v, key);
    else if (key == "adam_eps") s.train.adam_eps = get_number(v, key);
    else if (key == "seed") s.train.seed = get_unsigned(v, key);
    else if (key == "sigma_g") s.train.sigma_g = get_number(v, key);
    else if (key == "dropout_rate_pos") s.train.dropout_rate_pos = get_number(v, key);
    else if (key == "dropout_rate_neg") s.train.dropout_rate_neg = get_number(v, key);
    else if (key == "pair_mode") {
      const auto m = get_string(v, key);
      if (m == "synthetic_dropout") s.train.pair_mode = PairMode::synthetic_dropout;
      else if (m == "from_file") s.train.pair_mode = PairMode::from_file;
      else field_error(key, "\"synthetic_dropout\" or \"from_file\"");
    } else if (key == "temperature") s.train.loss.temperature = get_number(v, key);
    else if (key == "lambda_mse") s.train.loss.lambda_mse = get_number(v, key);
  }
  if (s.dim == 0) throw UsageError("config: field 'dim': must be > 0");
  try {
    s.train.validate();
  } catch (const ParameterError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (s.train.pair_mode == PairMode::from_file && !s.paired_views)
    throw UsageError("config: pair_mode \"from_file\" needs 'paired_views'");
  return s;
}

TrainSettings load_train_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_train_settings(buf.str(), path.parent_path());
}

std::string hyperparameter_json(const TrainSettings& s) {
  nlohmann::ordered_json j;
  j["dim"] = s.dim;
  j["precision"] = std::string(to_string(s.precision));
  j["quantizer"] = s.learned_quantizer ? "n2uq" : "ste";
  j["init"] = s.init == InitMode::pca ? "pca" : "random";
  j["device"] = s.device;
  j["epochs"] = s.train.epochs;
  j["batch_size"] = s.train.batch_size;
  j["learning_rate"] = s.train.learning_rate;
  j["adam_beta1"] = s.train.adam_beta1;
  j["adam_beta2"] = s.train.adam_beta2;
  j["adam_eps"] = s.train.adam_eps;
  j["seed"] = s.train.seed;
  j["sigma_g"] = s.train.sigma_g;
  j["dropout_rate_pos"] = s.train.dropout_rate_pos;
  if (s.train.dropout_rate_neg) j["dropout_rate_neg"] = *s.train.dropout_rate_neg;
  j["pair_mode"] = s.train.pair_mode == PairMode::from_file ? "from_file" : "synthetic_dropout";
  j["temperature"] = s.train.loss.temperature;
  j["lambda_mse"] = s.train.loss.lambda_mse;
  return j.dump();
}

}  // namespace cqcim
