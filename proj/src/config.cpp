#include "hissd/config.hpp"

#include <fstream>
#include <regex>
#include <set>

namespace hissd::cli {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects whatever it did not read.
class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError("config section '" + label() + "' must be an object");
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) wrong_type(key, "an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, long& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) wrong_type(key, "an integer");
      out = v->get<long>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        wrong_type(key, "a nonnegative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) wrong_type(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) wrong_type(key, "a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (seen_.count(it.key()) == 0) throw ConfigError("unknown config key '" + path(it.key()) + "'");
    }
  }

  [[noreturn]] void wrong_type(const std::string& key, const std::string& expected) const {
    throw ConfigError("config key '" + path(key) + "' must be " + expected);
  }

 private:
  std::string label() const { return where_.empty() ? "<root>" : where_; }

  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

json to_json(const nn::NetConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"attention_dim", c.attention_dim},
          {"skill_dim", c.skill_dim},
          {"mlp_hidden", c.mlp_hidden},
          {"heads", c.heads}};
}

json to_json(const loss::LossConfig& c) {
  return {{"gamma", c.gamma},
          {"epsilon_expectile", c.epsilon_expectile},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"sigma_temp", c.sigma_temp},
          {"weight_clip", c.weight_clip},
          {"advantage_source", loss::to_string(c.advantage_source)}};
}

std::vector<env::TaskSpec> tasks_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError("config key '" + where + "' must be an array");
  std::vector<env::TaskSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(task_from_json(j[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

template <class F>
void wrap_invalid(const std::string& where, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + where + "': " + e.what());
  }
}

}  // namespace

env::TaskSpec task_from_json(const json& j, const std::string& where) {
  env::TaskSpec t;
  if (j.is_string()) {
    static const std::regex shorthand(R"((\d+)v(\d+))");
    std::smatch m;
    const std::string s = j.get<std::string>();
    if (!std::regex_match(s, m, shorthand)) {
      throw ConfigError("config key '" + where + "': task shorthand must look like 3v3");
    }
    t = env::make_task(std::stoi(m[1]), std::stoi(m[2]));
  } else {
    Reader r(j, where);
    r.get("name", t.name);
    r.get("n_allies", t.n_allies);
    r.get("n_enemies", t.n_enemies);
    r.get("grid_size", t.grid_size);
    r.get("max_steps", t.max_steps);
    r.get("unit_hp", t.unit_hp);
    r.get("attack_range", t.attack_range);
    r.get("attack_damage", t.attack_damage);
    r.get("sight_range", t.sight_range);
    r.finish();
    if (t.name.empty()) t.name = std::to_string(t.n_allies) + "v" + std::to_string(t.n_enemies);
  }
  wrap_invalid(where, [&] { t.validate(); });
  return t;
}

json to_json(const env::TaskSpec& t) {
  return {{"name", t.name},
          {"n_allies", t.n_allies},
          {"n_enemies", t.n_enemies},
          {"grid_size", t.grid_size},
          {"max_steps", t.max_steps},
          {"unit_hp", t.unit_hp},
          {"attack_range", t.attack_range},
          {"attack_damage", t.attack_damage},
          {"sight_range", t.sight_range}};
}

void RunConfig::validate() const {
  if (source_tasks.empty()) throw ConfigError("config key 'source_tasks' must not be empty");
  if (episodes_per_task < 1) throw ConfigError("config key 'episodes_per_task' must be at least 1");
  if (!dataset_paths.empty() && dataset_paths.size() != source_tasks.size()) {
    throw ConfigError("config key 'dataset_paths' must list one path per source task");
  }
  if (eval_episodes < 1) throw ConfigError("config key 'eval_episodes' must be at least 1");
  if (export_episodes < 1) throw ConfigError("config key 'export_episodes' must be at least 1");
  if (calibration_episodes < 1) throw ConfigError("config key 'calibration_episodes' must be at least 1");
  if (!(calibration_tolerance > 0.0)) throw ConfigError("config key 'calibration_tolerance' must be positive");
  if (!(calibration_target > 0.0 && calibration_target <= 1.0)) {
    throw ConfigError("config key 'calibration_target' must lie in (0, 1]");
  }
  wrap_invalid("train", [&] { train.validate(); });
}

std::filesystem::path RunConfig::dataset_path(std::size_t task) const {
  if (!dataset_paths.empty()) return dataset_paths.at(task);
  return std::filesystem::path(out_dir) / "data" / (source_tasks.at(task).name + ".jsonl");
}

train::TrainConfig RunConfig::effective_train() const {
  train::TrainConfig t = train;
  t.seed = substream(seed, "train");
  return t;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.get("seed", c.seed);
  r.get("out_dir", c.out_dir);
  if (const json* v = r.find("source_tasks")) c.source_tasks = tasks_from_json(*v, "source_tasks");
  if (const json* v = r.find("eval_tasks")) c.eval_tasks = tasks_from_json(*v, "eval_tasks");
  std::string quality = data::to_string(c.quality);
  r.get("quality", quality);
  wrap_invalid("quality", [&] { c.quality = data::quality_from_string(quality); });
  r.get("episodes_per_task", c.episodes_per_task);
  if (const json* v = r.find("dataset_paths")) {
    if (!v->is_array()) r.wrong_type("dataset_paths", "an array of strings");
    c.dataset_paths.clear();
    for (const auto& p : *v) {
      if (!p.is_string()) r.wrong_type("dataset_paths", "an array of strings");
      c.dataset_paths.push_back(p.get<std::string>());
    }
  }
  r.get("calibration_target", c.calibration_target);
  r.get("calibration_tolerance", c.calibration_tolerance);
  r.get("calibration_episodes", c.calibration_episodes);
  r.get("eval_episodes", c.eval_episodes);
  r.get("export_episodes", c.export_episodes);

  if (const json* v = r.find("train")) {
    Reader t(*v, "train");
    train::TrainConfig& tc = c.train;
    t.get("steps", tc.steps);
    t.get("batch", tc.batch);
    t.get("lr", tc.lr);
    t.get("weight_decay", tc.weight_decay);
    t.get("target_rate", tc.target_rate);
    t.get("momentum_rate", tc.momentum_rate);
    t.get("negatives_per_task", tc.negatives_per_task);
    t.get("log_every", tc.log_every);
    std::string mode = train::to_string(tc.mode);
    t.get("mode", mode);
    wrap_invalid("train.mode", [&] { tc.mode = train::mode_from_string(mode); });
    if (const json* lv = t.find("loss")) {
      Reader l(*lv, "train.loss");
      l.get("gamma", tc.loss.gamma);
      l.get("epsilon_expectile", tc.loss.epsilon_expectile);
      l.get("alpha", tc.loss.alpha);
      l.get("beta", tc.loss.beta);
      l.get("sigma_temp", tc.loss.sigma_temp);
      l.get("weight_clip", tc.loss.weight_clip);
      std::string src = loss::to_string(tc.loss.advantage_source);
      l.get("advantage_source", src);
      wrap_invalid("train.loss.advantage_source",
                   [&] { tc.loss.advantage_source = loss::advantage_source_from_string(src); });
      l.finish();
    }
    if (const json* nv = t.find("net")) {
      Reader n(*nv, "train.net");
      n.get("hidden_dim", tc.net.hidden_dim);
      n.get("attention_dim", tc.net.attention_dim);
      n.get("skill_dim", tc.net.skill_dim);
      n.get("mlp_hidden", tc.net.mlp_hidden);
      n.get("heads", tc.net.heads);
      n.finish();
    }
    t.finish();
  }
  r.finish();
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json src = json::array(), ev = json::array();
  for (const auto& t : c.source_tasks) src.push_back(to_json(t));
  for (const auto& t : c.eval_tasks) ev.push_back(to_json(t));
  const train::TrainConfig& tc = c.train;
  return {{"seed", c.seed},
          {"out_dir", c.out_dir},
          {"source_tasks", src},
          {"eval_tasks", ev},
          {"quality", data::to_string(c.quality)},
          {"episodes_per_task", c.episodes_per_task},
          {"dataset_paths", c.dataset_paths},
          {"calibration_target", c.calibration_target},
          {"calibration_tolerance", c.calibration_tolerance},
          {"calibration_episodes", c.calibration_episodes},
          {"eval_episodes", c.eval_episodes},
          {"export_episodes", c.export_episodes},
          {"train",
           {{"steps", tc.steps},
            {"batch", tc.batch},
            {"lr", tc.lr},
            {"weight_decay", tc.weight_decay},
            {"target_rate", tc.target_rate},
            {"momentum_rate", tc.momentum_rate},
            {"negatives_per_task", tc.negatives_per_task},
            {"log_every", tc.log_every},
            {"mode", train::to_string(tc.mode)},
            {"loss", to_json(tc.loss)},
            {"net", to_json(tc.net)}}}};
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void write_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config '" + path.string() + "'");
  out << to_json(c).dump(2) << '\n';
}

}  // namespace hissd::cli
