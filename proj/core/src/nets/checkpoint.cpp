#include "xmodseg/nets/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xmodseg/error.hpp"

namespace xmodseg::nets {

namespace {

constexpr char kMagic[4] = {'X', 'M', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i64(std::string& out, std::int64_t v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  const char* take(std::size_t n) {
    if (b_.size() - pos_ < n) throw FormatError(pos_, "checkpoint truncated");
    const char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
           std::uint32_t{p[3]} << 24;
  }
  std::int64_t i64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = (u << 8) | p[i];
    return std::bit_cast<std::int64_t>(u);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters(true)) out[p.key()] = p.value();
  for (const auto& b : module.named_buffers(true)) out[b.key()] = b.value();
  return out;
}

std::string encode_checkpoint(const CheckpointManifest& manifest, const torch::nn::Module& module) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(manifest.format_version));
  const nlohmann::json mj{{"family", manifest.family},
                          {"config", manifest.config},
                          {"format_version", manifest.format_version},
                          {"extra", manifest.extra}};
  const auto text = mj.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto state = named_state(module);
  put_u32(out, static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, t] : state) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.dim()));
    for (auto s : t.sizes()) put_i64(out, s);
    auto data = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    out.append(reinterpret_cast<const char*>(data.data_ptr<float>()),
               static_cast<std::size_t>(data.numel()) * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw FormatError(0, "not a checkpoint archive");
  const auto version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw FormatError(4, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto mlen = r.u32();
  const auto mstart = r.pos();
  Checkpoint ck;
  try {
    const auto mj = nlohmann::json::parse(std::string(r.take(mlen), mlen));
    ck.manifest.family = mj.at("family").get<std::string>();
    ck.manifest.config = mj.at("config");
    ck.manifest.format_version = mj.at("format_version").get<int>();
    ck.manifest.extra = mj.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mstart, std::string("bad manifest: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.u32();
    std::string name(r.take(nlen), nlen);
    const auto ndim = r.u32();
    if (ndim > 8) throw FormatError(r.pos() - 4, "tensor '" + name + "' has too many dims");
    std::vector<std::int64_t> sizes;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      sizes.push_back(r.i64());
      if (sizes.back() < 0) throw FormatError(r.pos() - 8, "negative extent");
      numel *= sizes.back();
    }
    auto t = torch::empty(sizes, torch::kFloat32);
    const auto n = static_cast<std::size_t>(numel) * sizeof(float);
    std::memcpy(t.data_ptr<float>(), r.take(n), n);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError(r.pos(), "trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointManifest& manifest,
                     const torch::nn::Module& module) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(manifest, module);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

void load_state(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& family) {
  if (ckpt.manifest.family != family) {
    throw FormatError(0, "checkpoint family '" + ckpt.manifest.family + "' where '" + family +
                             "' was expected");
  }
  auto state = named_state(module);
  for (const auto& [name, t] : ckpt.tensors) {
    if (!state.count(name)) throw FormatError(0, "unexpected tensor '" + name + "'");
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : state) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw FormatError(0, "missing tensor '" + name + "'");
    if (it->second.sizes() != t.sizes()) {
      throw FormatError(0, "tensor '" + name + "' has shape " + c10::str(it->second.sizes()) +
                               ", model expects " + c10::str(t.sizes()));
    }
    t.copy_(it->second.to(t.dtype()));
  }
}

}  // namespace xmodseg::nets
