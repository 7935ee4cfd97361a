#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "foldnet/error.hpp"
#include "foldnet/model.hpp"

namespace foldnet::model {

namespace {
constexpr char kMagic[4] = {'D', 'S', 'F', '1'};
constexpr std::uint64_t kMaxConfigBytes = 1 << 20;
}  // namespace

std::string serialize_checkpoint(const ModelState& state) {
  state.validate();
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = state.config.to_json();
  io::write_le<std::uint64_t>(out, config.size());
  io::write_bytes(out, config);
  for (const Tensor* t : state.all_tensors()) {
    for (double v : t->values()) io::write_f32(out, v);
  }
  return out.str();
}

ModelState deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  std::istringstream in(bytes, std::ios::binary);
  io::Reader r(in, source);
  if (r.read_string(4, "magic") != std::string(kMagic, 4)) {
    throw FormatError(source + ": not a model checkpoint (bad magic)");
  }
  if (const auto v = r.read_le<std::uint32_t>("version"); v != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(v));
  }
  const auto config_len = r.read_le<std::uint64_t>("config length");
  if (config_len > kMaxConfigBytes) {
    throw FormatError(source + ": implausible config length " + std::to_string(config_len));
  }
  ModelState state = build_model(ModelConfig::from_json(r.read_string(config_len, "config")), 0);
  for (Tensor* t : state.all_tensors()) {
    for (double& v : t->values()) v = r.read_f32("parameters");
  }
  r.expect_end();
  try {
    state.validate();
  } catch (const ValidationError& e) {
    throw FormatError(source + ": " + e.what());
  }
  return state;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace foldnet::model
