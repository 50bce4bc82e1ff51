#include "xmodseg/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xmodseg/error.hpp"

namespace xmodseg {
namespace {

constexpr char kMagic[4] = {'M', 'V', 'L', '1'};
constexpr std::size_t kHeaderSize = 32;

enum class Payload : std::uint8_t { kData = 0, kDataAndMask = 1, kMaskOnly = 2 };

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void require(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(pos_, std::string("truncated file while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    require(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode(const Volume& v, Payload payload) {
  std::vector<std::uint8_t> out;
  const auto n = static_cast<std::size_t>(v.dims.voxel_count());
  out.reserve(kHeaderSize + n * 5);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kVolumeFormatVersion);
  out.push_back(static_cast<std::uint8_t>(v.modality));
  out.push_back(static_cast<std::uint8_t>(v.presence));
  out.push_back(static_cast<std::uint8_t>(payload));
  put_u32(out, static_cast<std::uint32_t>(v.dims.depth));
  put_u32(out, static_cast<std::uint32_t>(v.dims.height));
  put_u32(out, static_cast<std::uint32_t>(v.dims.width));
  for (float s : v.spacing) put_f32(out, s);
  if (payload != Payload::kMaskOnly) {
    for (float x : v.data) put_f32(out, x);
  }
  if (payload != Payload::kData) out.insert(out.end(), v.mask->begin(), v.mask->end());
  return out;
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  v.validate();
  return encode(v, v.mask ? Payload::kDataAndMask : Payload::kData);
}

Volume decode_volume(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.require(4, "magic");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError(0, "bad magic, expected \"MVL1\"");
  }
  for (int i = 0; i < 4; ++i) r.u8("magic");
  const auto version = r.u8("version");
  if (version != kVolumeFormatVersion) {
    throw FormatError(4, "unsupported version " + std::to_string(version));
  }
  Volume v;
  const auto modality = r.u8("modality");
  if (modality > 1) throw FormatError(5, "invalid modality code " + std::to_string(modality));
  v.modality = static_cast<Modality>(modality);
  const auto presence = r.u8("presence label");
  if (presence > 2) throw FormatError(6, "invalid presence code " + std::to_string(presence));
  v.presence = static_cast<PresenceLabel>(presence);
  const auto payload = r.u8("payload flag");
  if (payload > 2) throw FormatError(7, "invalid payload flag " + std::to_string(payload));
  v.dims.depth = r.u32("dims");
  v.dims.height = r.u32("dims");
  v.dims.width = r.u32("dims");
  if (v.dims.voxel_count() == 0) throw FormatError(8, "zero extent");
  for (auto& s : v.spacing) s = r.f32("spacing");

  const auto n = static_cast<std::size_t>(v.dims.voxel_count());
  if (static_cast<Payload>(payload) != Payload::kMaskOnly) {
    r.require(n * 4, "voxel data");
    v.data.resize(n);
    for (auto& x : v.data) x = r.f32("voxel data");
  } else {
    v.data.assign(n, 0.0f);
  }
  if (static_cast<Payload>(payload) != Payload::kData) {
    r.require(n, "mask");
    Mask m(n);
    for (auto& x : m) {
      const auto at = r.pos();
      x = r.u8("mask");
      if (x > 1) throw FormatError(at, "non-binary mask value");
    }
    v.mask = std::move(m);
  }
  if (r.pos() != bytes.size()) throw FormatError(r.pos(), "trailing bytes after payload");
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  write_file(encode_volume(v), path);
}

Volume load_volume(const std::filesystem::path& path) {
  Volume v = decode_volume(read_file(path));
  v.id = path.stem().string();
  return v;
}

void save_mask(const Volume& v, const std::filesystem::path& path) {
  if (!v.mask || v.mask->size() != static_cast<std::size_t>(v.dims.voxel_count())) {
    throw ShapeError("save_mask requires a mask matching the dims");
  }
  write_file(encode(v, Payload::kMaskOnly), path);
}

Volume load_mask(const std::filesystem::path& path) {
  Volume v = load_volume(path);
  if (!v.mask) throw FormatError(7, "file carries no mask");
  return v;
}

std::vector<Volume> load_volume_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: '" + dir.string() + "'");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mvl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Volume> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_volume(f));
  return out;
}

void save_volume_dir(const std::vector<Volume>& volumes, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& v : volumes) save_volume(v, dir / (v.id + ".mvl"));
}

}  // namespace xmodseg
