#include "abn/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace abn {

namespace {

constexpr const char* kMagic = "abn-checkpoint";

std::string variants_string(const ModelConfig& c) {
  std::string s;
  for (std::size_t l = 0; l < c.num_layers; ++l) s += std::string(l ? "," : "") + std::string(to_string(c.variant(l)));
  return s;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  out << "tensor " << name << " " << t.rank();
  for (auto d : t.shape()) out << " " << d;
  out << "\n";
  char buf[40];
  std::size_t col = 0;
  for (double v : t.data()) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << (col ? " " : "") << buf;
    if (++col == 8) {
      out << "\n";
      col = 0;
    }
  }
  if (col) out << "\n";
}

void check_compatible(const ModelConfig& stored, const ModelConfig& expected) {
  if (variants_string(stored) != variants_string(expected))
    throw CheckpointError("checkpoint holds variant(s) " + variants_string(stored) + " but " +
                          variants_string(expected) + " was requested");
  auto same = [&](const char* what, std::size_t a, std::size_t b) {
    if (a != b)
      throw CheckpointError(std::string("checkpoint ") + what + " is " + std::to_string(a) +
                            ", configuration expects " + std::to_string(b));
  };
  same("layer count", stored.num_layers, expected.num_layers);
  same("hidden size", stored.hidden, expected.hidden);
  same("input dimension", stored.input_dim, expected.input_dim);
  same("vocabulary", stored.vocab, expected.vocab);
  for (std::size_t l = 0; l < stored.num_layers; ++l) {
    if (stored.variant(l) == Variant::abn_frame) same("d_e", stored.d_e, expected.d_e);
    if (stored.variant(l) == Variant::abn_utt) same("d_a", stored.d_a, expected.d_a);
  }
}

}  // namespace

std::string checkpoint_text(AcousticModel& model, const RunConfig& config) {
  std::ostringstream out;
  out << kMagic << " " << kCheckpointVersion << "\n";
  out << "blank " << kBlank << "\n";
  std::istringstream cfg(to_config_text(config));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(cfg, line)) lines.push_back(line);
  out << "config " << lines.size() << "\n";
  for (const auto& l : lines) out << l << "\n";
  auto params = model.parameters();
  auto buffers = model.buffers();
  out << "tensors " << params.size() + buffers.size() << "\n";
  for (const auto& p : params) write_tensor(out, p.name, *p.tensor);
  for (const auto& b : buffers) write_tensor(out, b.name, *b.tensor);
  out << "end\n";
  return out.str();
}

void save_checkpoint(const std::string& path, AcousticModel& model, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out << checkpoint_text(model, config);
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

Checkpoint parse_checkpoint(const std::string& text, const std::optional<ModelConfig>& expected) {
  std::istringstream in(text);
  std::string word;
  int version = 0;
  if (!(in >> word) || word != kMagic) throw CheckpointError("not a checkpoint (bad header)");
  if (!(in >> version)) throw CheckpointError("checkpoint header has no format version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  std::size_t blank = 0;
  if (!(in >> word >> blank) || word != "blank") throw CheckpointError("checkpoint is missing the blank index");
  if (blank != kBlank) throw CheckpointError("checkpoint uses blank index " + std::to_string(blank));

  std::size_t config_lines = 0;
  if (!(in >> word >> config_lines) || word != "config") throw CheckpointError("checkpoint is missing its config");
  std::string line;
  std::getline(in, line);
  std::string cfg;
  for (std::size_t i = 0; i < config_lines; ++i) {
    if (!std::getline(in, line)) throw CheckpointError("checkpoint truncated inside config");
    cfg += line + "\n";
  }
  Checkpoint ck;
  try {
    ck.config = parse_config(cfg);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (expected) check_compatible(ck.config.model, *expected);
  ck.model = AcousticModel::create(ck.config.model, 0);

  std::size_t count = 0;
  if (!(in >> word >> count) || word != "tensors") throw CheckpointError("checkpoint is missing its tensor count");
  auto params = ck.model.parameters();
  auto buffers = ck.model.buffers();
  std::vector<NamedTensor> slots = params;
  slots.insert(slots.end(), buffers.begin(), buffers.end());
  if (count != slots.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                          std::to_string(slots.size()));
  for (const auto& slot : slots) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> word >> name >> rank) || word != "tensor")
      throw CheckpointError("checkpoint truncated before " + slot.name);
    if (name != slot.name) throw CheckpointError("checkpoint has " + name + " where " + slot.name + " belongs");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(in >> d)) throw CheckpointError("checkpoint truncated in shape of " + name);
    if (shape != slot.tensor->shape())
      throw CheckpointError("shape mismatch for " + name + ": stored " + shape_to_string(shape) + ", model " +
                            shape_to_string(slot.tensor->shape()));
    for (double& v : slot.tensor->data()) {
      std::string tok;
      if (!(in >> tok)) throw CheckpointError("checkpoint truncated in values of " + name);
      char* end = nullptr;
      v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) throw CheckpointError("bad value '" + tok + "' in " + name);
    }
  }
  if (!(in >> word) || word != "end") throw CheckpointError("checkpoint truncated (missing end marker)");
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), expected);
}

}  // namespace abn
