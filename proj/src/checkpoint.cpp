#include "nvsd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nvsd {

namespace {

constexpr char kMagic[4] = {'N', 'V', 'S', 'D'};

// All multi-byte fields are little-endian on disk; these helpers keep the
// format byte-stable on any host.
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  bool eof() const { return pos >= buf.size(); }
  void need(std::size_t n, const std::string& what) {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint truncated while reading " + what);
  }
  std::uint16_t u16(const std::string& what) {
    need(2, what);
    std::uint16_t v = std::uint8_t(buf[pos]) | (std::uint16_t(std::uint8_t(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  float f32(const std::string& what) {
    std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
};

std::string serialize(const std::vector<NamedParam>& tensors,
                      const nlohmann::ordered_json& meta) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  std::string mj = meta.dump();
  put_u64(out, mj.size());
  out += mj;
  for (const auto& p : tensors) {
    if (p.name.size() > 0xffff)
      throw std::invalid_argument("tensor name too long: " + p.name);
    put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    const auto& shape = p.tensor.shape();
    out.push_back(char(shape.size()));
    for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : p.tensor.data()) put_f32(out, f);
  }
  return out;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint parse(const std::string& bytes, const std::string& path) {
  Reader r{bytes};
  std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint (bad magic): " + path);
  std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + ": " + path);
  std::uint64_t mlen = r.u64("metadata length");
  std::string mj = r.bytes(mlen, "metadata");
  Checkpoint ck;
  try {
    ck.meta = nlohmann::ordered_json::parse(mj);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint metadata is not JSON: ") +
                             e.what());
  }
  for (int index = 0; !r.eof(); ++index) {
    std::string where = "record " + std::to_string(index);
    std::uint16_t nlen = r.u16(where + " name length");
    std::string name = r.bytes(nlen, where + " name");
    r.need(1, where + " rank");
    int rank = std::uint8_t(bytes[r.pos++]);
    std::vector<int> shape;
    std::size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t dim = r.u32(where + " dims");
      if (dim == 0 || numel > (1u << 28) / dim)
        throw std::runtime_error("checkpoint " + where +
                                 " has an implausible shape: " + path);
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    std::vector<float> data(numel);
    r.need(4 * numel, where + " payload");
    for (std::size_t i = 0; i < numel; ++i) data[i] = r.f32(where + " payload");
    for (const auto& existing : ck.tensors)
      if (existing.name == name)
        throw std::runtime_error("checkpoint has duplicate tensor '" + name +
                                 "' at " + where);
    ck.tensors.push_back({name, Tensor::from(shape, std::move(data))});
  }
  return ck;
}

Checkpoint read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  return parse(bytes, path);
}

void fill_model(Denoiser& model, const std::vector<NamedParam>& tensors,
                const std::string& prefix) {
  std::size_t used = 0;
  for (auto& p : model.parameters()) {
    bool found = false;
    for (const auto& t : tensors) {
      if (t.name != prefix + p.name) continue;
      if (t.tensor.shape() != p.tensor.shape())
        throw std::runtime_error("checkpoint tensor '" + t.name +
                                 "' has the wrong shape");
      p.tensor.data() = t.tensor.data();
      found = true;
      ++used;
      break;
    }
    if (!found)
      throw std::runtime_error("checkpoint is missing tensor '" + prefix +
                               p.name + "'");
  }
  (void)used;
}

std::shared_ptr<Denoiser> model_from(const nlohmann::json& cfg_json,
                                     const std::vector<NamedParam>& tensors,
                                     const std::string& prefix) {
  DenoiserConfig cfg = denoiser_config_from_json(cfg_json);
  SeededRng scratch(0, RngStream::ParamInit);
  auto model = std::make_shared<Denoiser>(cfg, scratch);
  fill_model(*model, tensors, prefix);
  return model;
}

}  // namespace

void save_checkpoint(const Denoiser& model, const std::string& path,
                     const nlohmann::ordered_json& extra_meta) {
  nlohmann::ordered_json meta;
  meta["kind"] = "model";
  meta["model"] = denoiser_config_json(model.config());
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it)
    meta[it.key()] = it.value();
  write_file(path, serialize(model.parameters(), meta));
}

Checkpoint load_checkpoint(const std::string& path) { return read_file(path); }

std::shared_ptr<Denoiser> load_model(const std::string& path) {
  Checkpoint ck = read_file(path);
  if (ck.meta.value("kind", "") != "model")
    throw std::runtime_error("checkpoint is not a single model: " + path);
  return model_from(ck.meta.at("model"), ck.tensors, "");
}

void save_expert_pair(const ExpertPair& pair, const std::string& path,
                      const nlohmann::ordered_json& extra_meta) {
  nlohmann::ordered_json meta;
  meta["kind"] = "expert_pair";
  meta["model"] = denoiser_config_json(pair.high->config());
  meta["boundary"] = pair.boundary;
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it)
    meta[it.key()] = it.value();
  std::vector<NamedParam> tensors;
  for (const auto& p : pair.high->parameters())
    tensors.push_back({"high." + p.name, p.tensor});
  for (const auto& p : pair.low->parameters())
    tensors.push_back({"low." + p.name, p.tensor});
  write_file(path, serialize(tensors, meta));
}

ExpertPair load_expert_pair(const std::string& path) {
  Checkpoint ck = read_file(path);
  if (ck.meta.value("kind", "") != "expert_pair")
    throw std::runtime_error("checkpoint is not an expert pair: " + path);
  ExpertPair pair;
  pair.boundary = ck.meta.at("boundary").get<int>();
  pair.high = model_from(ck.meta.at("model"), ck.tensors, "high.");
  pair.low = model_from(ck.meta.at("model"), ck.tensors, "low.");
  return pair;
}

nlohmann::ordered_json denoiser_config_json(const DenoiserConfig& cfg) {
  nlohmann::ordered_json j;
  j["resolution"] = cfg.resolution;
  j["base_channels"] = cfg.base_channels;
  j["channel_mult"] = cfg.channel_mult;
  j["mechanism"] = mechanism_name(cfg.mechanism);
  j["pose_token"] = cfg.pose_token;
  j["text"] = cfg.text;
  j["freq_bands"] = cfg.freq_bands;
  j["text_dim"] = cfg.text_dim;
  j["max_caption_len"] = cfg.max_caption_len;
  j["time_dim"] = cfg.time_dim;
  return j;
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig cfg;
  cfg.resolution = j.at("resolution").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  cfg.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
  cfg.pose_token = j.at("pose_token").get<bool>();
  cfg.text = j.at("text").get<bool>();
  cfg.freq_bands = j.at("freq_bands").get<int>();
  cfg.text_dim = j.at("text_dim").get<int>();
  cfg.max_caption_len = j.at("max_caption_len").get<int>();
  cfg.time_dim = j.at("time_dim").get<int>();
  cfg.validate();
  return cfg;
}

}  // namespace nvsd
