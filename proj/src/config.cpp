#include "abn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "abn/errors.hpp"

namespace abn {

void SyntheticTask::validate() const {
  if (vocab < 2) throw ContractError("vocab must be at least 2 (blank plus one token)");
  if (features == 0) throw ContractError("features must be positive");
  if (min_token_frames == 0 || min_token_frames > max_token_frames)
    throw ContractError("token frame range must satisfy 1 <= min_token_frames <= max_token_frames");
  if (min_tokens == 0 || min_tokens > max_tokens)
    throw ContractError("token count range must satisfy 1 <= min_tokens <= max_tokens");
  if (vocab == 2 && max_tokens > 1)
    throw ContractError("a single token type cannot form sequences without adjacent repeats");
  if (!(noise >= 0.0)) throw ContractError("noise must be nonnegative");
}

void TrainConfig::validate() const {
  if (max_frames_per_batch == 0) throw ContractError("max_frames must be positive");
  if (!(initial_lr > 0.0)) throw ContractError("lr must be positive");
  if (!(stop_threshold > 0.0 && halve_threshold > 0.0))
    throw ContractError("schedule thresholds must be positive");
  if (!(stop_threshold < halve_threshold))
    throw ContractError("stop_threshold must be below halve_threshold");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ContractError("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ContractError("adam_epsilon must be positive");
  if (epochs == 0) throw ContractError("epochs must be positive");
  if (train_utterances == 0 || dev_utterances == 0)
    throw ContractError("train and dev sets must be nonempty");
}

void RunConfig::validate() const {
  task.validate();
  train.validate();
  model.validate();
  if (model.vocab != task.vocab || model.input_dim != task.features)
    throw ContractError("model dimensions disagree with the task");
}

std::string to_string(ScheduleMetric m) { return m == ScheduleMetric::loss ? "loss" : "ter"; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ContractError("not a number: '" + v + "'");
  return out;
}

std::vector<Variant> parse_variants(const std::string& v) {
  std::vector<Variant> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_variant(trim(item)));
  if (out.empty()) throw ContractError("empty variant list");
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    // model
    t["layers"] = [](RunConfig& c, const std::string& v) { c.model.num_layers = parse_number<std::size_t>(v); };
    t["hidden"] = [](RunConfig& c, const std::string& v) { c.model.hidden = parse_number<std::size_t>(v); };
    t["variant"] = [](RunConfig& c, const std::string& v) { c.model.variants = parse_variants(v); };
    t["dropout"] = [](RunConfig& c, const std::string& v) { c.model.dropout = parse_number<double>(v); };
    t["generator_dropout"] = [](RunConfig& c, const std::string& v) {
      c.model.generator_dropout = parse_number<double>(v);
    };
    t["d_e"] = [](RunConfig& c, const std::string& v) { c.model.d_e = parse_number<std::size_t>(v); };
    t["d_a"] = [](RunConfig& c, const std::string& v) { c.model.d_a = parse_number<std::size_t>(v); };
    t["bn_epsilon"] = [](RunConfig& c, const std::string& v) { c.model.bn_epsilon = parse_number<double>(v); };
    t["bn_momentum"] = [](RunConfig& c, const std::string& v) { c.model.bn_momentum = parse_number<double>(v); };
    // training
    t["max_frames"] = [](RunConfig& c, const std::string& v) {
      c.train.max_frames_per_batch = parse_number<std::size_t>(v);
    };
    t["lr"] = [](RunConfig& c, const std::string& v) { c.train.initial_lr = parse_number<double>(v); };
    t["halve_threshold"] = [](RunConfig& c, const std::string& v) {
      c.train.halve_threshold = parse_number<double>(v);
    };
    t["stop_threshold"] = [](RunConfig& c, const std::string& v) {
      c.train.stop_threshold = parse_number<double>(v);
    };
    t["adam_beta1"] = [](RunConfig& c, const std::string& v) { c.train.adam_beta1 = parse_number<double>(v); };
    t["adam_beta2"] = [](RunConfig& c, const std::string& v) { c.train.adam_beta2 = parse_number<double>(v); };
    t["adam_epsilon"] = [](RunConfig& c, const std::string& v) { c.train.adam_epsilon = parse_number<double>(v); };
    t["epochs"] = [](RunConfig& c, const std::string& v) { c.train.epochs = parse_number<std::size_t>(v); };
    t["seed"] = [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>(v); };
    t["schedule_metric"] = [](RunConfig& c, const std::string& v) {
      if (v == "loss")
        c.train.schedule_metric = ScheduleMetric::loss;
      else if (v == "ter")
        c.train.schedule_metric = ScheduleMetric::ter;
      else
        throw ContractError("schedule_metric must be loss or ter, got '" + v + "'");
    };
    t["train_utterances"] = [](RunConfig& c, const std::string& v) {
      c.train.train_utterances = parse_number<std::size_t>(v);
    };
    t["dev_utterances"] = [](RunConfig& c, const std::string& v) {
      c.train.dev_utterances = parse_number<std::size_t>(v);
    };
    t["data_seed"] = [](RunConfig& c, const std::string& v) { c.train.data_seed = parse_number<std::uint64_t>(v); };
    // task
    t["vocab"] = [](RunConfig& c, const std::string& v) { c.task.vocab = parse_number<std::size_t>(v); };
    t["features"] = [](RunConfig& c, const std::string& v) { c.task.features = parse_number<std::size_t>(v); };
    t["min_token_frames"] = [](RunConfig& c, const std::string& v) {
      c.task.min_token_frames = parse_number<std::size_t>(v);
    };
    t["max_token_frames"] = [](RunConfig& c, const std::string& v) {
      c.task.max_token_frames = parse_number<std::size_t>(v);
    };
    t["min_tokens"] = [](RunConfig& c, const std::string& v) { c.task.min_tokens = parse_number<std::size_t>(v); };
    t["max_tokens"] = [](RunConfig& c, const std::string& v) { c.task.max_tokens = parse_number<std::size_t>(v); };
    t["noise"] = [](RunConfig& c, const std::string& v) { c.task.noise = parse_number<double>(v); };
    t["template_seed"] = [](RunConfig& c, const std::string& v) {
      c.task.template_seed = parse_number<std::uint64_t>(v);
    };
    return t;
  }();
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ContractError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ContractError(where + "repeated key '" + key + "'");
    if (value.empty()) throw ContractError(where + "missing value for '" + key + "'");
    try {
      it->second(c, value);
    } catch (const ContractError& e) {
      throw ContractError(where + key + ": " + e.what());
    }
  }
  c.model.vocab = c.task.vocab;
  c.model.input_dim = c.task.features;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream o;
  std::string variants;
  for (std::size_t i = 0; i < c.model.variants.size(); ++i)
    variants += std::string(i ? "," : "") + std::string(to_string(c.model.variants[i]));
  o << "layers = " << c.model.num_layers << "\n"
    << "hidden = " << c.model.hidden << "\n"
    << "variant = " << variants << "\n"
    << "dropout = " << format_double(c.model.dropout) << "\n"
    << "generator_dropout = " << format_double(c.model.generator_dropout) << "\n"
    << "d_e = " << c.model.d_e << "\n"
    << "d_a = " << c.model.d_a << "\n"
    << "bn_epsilon = " << format_double(c.model.bn_epsilon) << "\n"
    << "bn_momentum = " << format_double(c.model.bn_momentum) << "\n"
    << "max_frames = " << c.train.max_frames_per_batch << "\n"
    << "lr = " << format_double(c.train.initial_lr) << "\n"
    << "halve_threshold = " << format_double(c.train.halve_threshold) << "\n"
    << "stop_threshold = " << format_double(c.train.stop_threshold) << "\n"
    << "adam_beta1 = " << format_double(c.train.adam_beta1) << "\n"
    << "adam_beta2 = " << format_double(c.train.adam_beta2) << "\n"
    << "adam_epsilon = " << format_double(c.train.adam_epsilon) << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "seed = " << c.train.seed << "\n"
    << "schedule_metric = " << to_string(c.train.schedule_metric) << "\n"
    << "train_utterances = " << c.train.train_utterances << "\n"
    << "dev_utterances = " << c.train.dev_utterances << "\n"
    << "data_seed = " << c.train.data_seed << "\n"
    << "vocab = " << c.task.vocab << "\n"
    << "features = " << c.task.features << "\n"
    << "min_token_frames = " << c.task.min_token_frames << "\n"
    << "max_token_frames = " << c.task.max_token_frames << "\n"
    << "min_tokens = " << c.task.min_tokens << "\n"
    << "max_tokens = " << c.task.max_tokens << "\n"
    << "noise = " << format_double(c.task.noise) << "\n"
    << "template_seed = " << c.task.template_seed << "\n";
  return o.str();
}

}  // namespace abn
