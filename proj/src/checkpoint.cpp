#include "dto/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "dto/error.hpp"

namespace dto {

using nlohmann::json;

std::string config_json(const SttConfig& c) {
  json j = {{"d_model", c.d_model},   {"d_ff", c.d_ff},
            {"heads", c.heads},       {"layers", c.layers},
            {"t_obs", c.t_obs},       {"t_pred", c.t_pred},
            {"spatial_threshold", c.spatial_threshold},
            {"dropout", c.dropout},   {"version", 1}};
  return j.dump();
}

SttConfig config_from_json(const std::string& text) {
  SttConfig c;
  try {
    const json j = json::parse(text);
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.t_obs = j.at("t_obs").get<std::size_t>();
    c.t_pred = j.at("t_pred").get<std::size_t>();
    c.spatial_threshold = j.at("spatial_threshold").get<double>();
    c.dropout = j.at("dropout").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::checkpoint_dimension, std::string("bad checkpoint config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      throw Error(ErrorKind::checkpoint_truncated,
                  std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::string checkpoint_bytes(const SttModel& model) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::string cfg = config_json(model.config());
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

SttModel checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw Error(ErrorKind::checkpoint_magic, "not a checkpoint (bad magic)");
  }
  Reader r{bytes, sizeof kCheckpointMagic};
  const std::uint32_t cfg_len = r.u32("config length");
  const SttConfig config = config_from_json(r.text(cfg_len, "config"));
  SttModel model(config, 0);
  const auto layout = SttModel::parameter_layout(config);
  const std::uint32_t count = r.u32("tensor count");
  if (count != layout.size()) {
    throw Error(ErrorKind::checkpoint_dimension,
                "checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                    std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    const std::string stored = r.text(r.u32("name length"), "name");
    if (stored != name) {
      throw Error(ErrorKind::checkpoint_dimension,
                  "tensor " + std::to_string(i) + " is '" + stored + "', expected '" + name + "'");
    }
    const std::uint32_t rank = r.u32("rank");
    Shape dims;
    if (rank != shape.size()) {
      throw Error(ErrorKind::checkpoint_dimension, name + ": rank " + std::to_string(rank) +
                                                       ", expected " +
                                                       std::to_string(shape.size()));
    }
    for (std::uint32_t k = 0; k < rank; ++k) dims.push_back(r.u32("dims"));
    if (dims != shape) {
      throw Error(ErrorKind::checkpoint_dimension, name + ": stored shape " + shape_str(dims) +
                                                       ", expected " + shape_str(shape));
    }
    auto values = model.parameters()[i].tensor.mutable_values();
    r.need(values.size() * 4, "values");
    for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(r.u32("values")));
  }
  if (r.pos != bytes.size()) {
    throw Error(ErrorKind::checkpoint_dimension, "trailing bytes after the last tensor");
  }
  return model;
}

void save_checkpoint(const SttModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  const std::string bytes = checkpoint_bytes(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

SttModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace dto
