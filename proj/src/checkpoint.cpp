#include "hissd/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>
#include <string>

namespace hissd::train {

namespace {

constexpr const char* kMagic = "hissd-checkpoint-1";

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

nlohmann::json net_to_json(const nn::NetConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"attention_dim", c.attention_dim},
          {"skill_dim", c.skill_dim},
          {"mlp_hidden", c.mlp_hidden},
          {"heads", c.heads}};
}

[[noreturn]] void bad_field(const std::filesystem::path& path, const std::string& field,
                            const std::string& why) {
  throw std::runtime_error(path.string() + ": checkpoint manifest field '" + field + "' " + why);
}

const nlohmann::json& field(const nlohmann::json& obj, const std::string& key,
                            const std::string& where, const std::filesystem::path& path) {
  const std::string name = where.empty() ? key : where + "." + key;
  if (!obj.is_object() || !obj.contains(key)) bad_field(path, name, "is missing");
  return obj.at(key);
}

int int_field(const nlohmann::json& obj, const std::string& key, const std::string& where,
              const std::filesystem::path& path) {
  const auto& v = field(obj, key, where, path);
  if (!v.is_number_integer()) bad_field(path, where.empty() ? key : where + "." + key, "is not an integer");
  return v.get<int>();
}

}  // namespace

void save_checkpoint(const nn::Model& model, long step, const nlohmann::json& config,
                     const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const nn::ParamStore* s : model.stores()) {
    for (int i = 0; i < s->size(); ++i) {
      tensors.push_back({{"store", s->name()},
                         {"name", s->entry_name(i)},
                         {"shape", {s->value(i).rows(), s->value(i).cols()}}});
    }
  }
  nlohmann::json manifest = {{"format", kMagic},
                             {"step", step},
                             {"net", net_to_json(model.config)},
                             {"config", config},
                             {"tensors", tensors}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out << kMagic << '\n' << manifest.dump() << '\n';
  for (const nn::ParamStore* s : model.stores()) {
    for (int i = 0; i < s->size(); ++i) {
      out.write(reinterpret_cast<const char*>(s->value(i).data()),
                static_cast<std::streamsize>(sizeof(double) * s->value(i).size()));
    }
  }
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::string magic, line;
  std::getline(in, magic);
  if (magic != kMagic) throw std::runtime_error(path.string() + ": not a checkpoint file");
  std::getline(in, line);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": checkpoint manifest does not parse: " + e.what());
  }
  if (field(manifest, "format", "", path) != kMagic) bad_field(path, "format", "has an unknown value");
  const auto& step = field(manifest, "step", "", path);
  if (!step.is_number_integer()) bad_field(path, "step", "is not an integer");

  const auto& net = field(manifest, "net", "", path);
  nn::NetConfig cfg;
  cfg.hidden_dim = int_field(net, "hidden_dim", "net", path);
  cfg.attention_dim = int_field(net, "attention_dim", "net", path);
  cfg.skill_dim = int_field(net, "skill_dim", "net", path);
  cfg.mlp_hidden = int_field(net, "mlp_hidden", "net", path);
  cfg.heads = int_field(net, "heads", "net", path);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    bad_field(path, "net", std::string("is invalid: ") + e.what());
  }

  LoadedCheckpoint ck;
  ck.step = step.get<long>();
  ck.config = field(manifest, "config", "", path);
  ck.model = std::make_unique<nn::Model>(cfg, 0);

  const auto& tensors = field(manifest, "tensors", "", path);
  if (!tensors.is_array()) bad_field(path, "tensors", "is not an array");
  std::size_t t = 0;
  for (nn::ParamStore* s : ck.model->stores()) {
    for (int i = 0; i < s->size(); ++i, ++t) {
      const std::string where = "tensors[" + std::to_string(t) + "]";
      if (t >= tensors.size()) bad_field(path, "tensors", "has too few entries");
      const auto& e = tensors[t];
      if (field(e, "store", where, path) != s->name()) bad_field(path, where + ".store", "does not match the model");
      if (field(e, "name", where, path) != s->entry_name(i)) bad_field(path, where + ".name", "does not match the model");
      const auto& shape = field(e, "shape", where, path);
      if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_integer() ||
          !shape[1].is_number_integer() || shape[0].get<long>() != s->value(i).rows() ||
          shape[1].get<long>() != s->value(i).cols()) {
        bad_field(path, where + ".shape", "does not match the model");
      }
      nn::Mat& v = s->value(i);
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * v.size()));
      if (!in) throw std::runtime_error(path.string() + ": truncated tensor data at " + where);
    }
  }
  if (t != tensors.size()) bad_field(path, "tensors", "has extra entries");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path.string() + ": trailing bytes after tensor data");
  }
  return ck;
}

}  // namespace hissd::train
