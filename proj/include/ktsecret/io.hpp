#ifndef KTSECRET_IO_HPP
#define KTSECRET_IO_HPP

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <variant>

#include <json.hpp>

#include "learn_recon.hpp"
#include "neural.hpp"

namespace ktsecret {

struct FormatError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Tensor container
//
//   "KTSR" | u16 version=1 | u8 dtype (1=f64, 2=c128) | u8 ndim | u64 dims[ndim]
//   | payload (little-endian, row-major) | u32 CRC32(payload)
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kContainerVersion = 1;
enum class DType : std::uint8_t { f64 = 1, c128 = 2 };

using AnyTensor = std::variant<RTensor, CTensor>;

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <class T>
std::vector<std::uint8_t> encode_impl(const Tensor<T>& t, DType dtype) {
  if (t.ndim() > 255) throw FormatError("too many dimensions for container");
  std::vector<std::uint8_t> out{'K', 'T', 'S', 'R'};
  put_le(out, kContainerVersion, 2);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.ndim()));
  for (auto d : t.shape()) put_le(out, d, 8);
  const std::size_t payload_start = out.size();
  for (const auto& v : t.data()) {
    if constexpr (std::is_same_v<T, double>) {
      put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    } else {
      put_le(out, std::bit_cast<std::uint64_t>(v.real()), 8);
      put_le(out, std::bit_cast<std::uint64_t>(v.imag()), 8);
    }
  }
  put_le(out, crc32_of(out.data() + payload_start, out.size() - payload_start), 4);
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_container(const RTensor& t) { return detail::encode_impl(t, DType::f64); }
inline std::vector<std::uint8_t> encode_container(const CTensor& t) { return detail::encode_impl(t, DType::c128); }

inline AnyTensor decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "KTSR", 4) != 0) throw FormatError("not a KTSR container");
  const auto version = detail::get_le(bytes.data() + 4, 2);
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto dtype = bytes[6];
  const std::size_t ndim = bytes[7];
  if (dtype != 1 && dtype != 2) throw FormatError("unknown container dtype");
  if (bytes.size() < 8 + 8 * ndim) throw FormatError("truncated container header");
  std::vector<std::size_t> shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = detail::get_le(bytes.data() + 8 + 8 * i, 8);
  const std::size_t count = Tensor<double>::count(shape);
  const std::size_t elem = dtype == 1 ? 8 : 16;
  const std::size_t start = 8 + 8 * ndim;
  if (count != 0 && elem * count / count != elem) throw FormatError("container dimensions overflow");
  if (bytes.size() != start + elem * count + 4) throw FormatError("container payload length mismatch");
  const std::uint8_t* p = bytes.data() + start;
  const auto crc = static_cast<std::uint32_t>(detail::get_le(p + elem * count, 4));
  if (crc != detail::crc32_of(p, elem * count)) throw FormatError("container CRC mismatch");
  if (dtype == 1) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = std::bit_cast<double>(detail::get_le(p + 8 * i, 8));
    return RTensor(std::move(shape), std::move(v));
  }
  std::vector<cplx> v(count);
  for (std::size_t i = 0; i < count; ++i)
    v[i] = cplx(std::bit_cast<double>(detail::get_le(p + 16 * i, 8)),
                std::bit_cast<double>(detail::get_le(p + 16 * i + 8, 8)));
  return CTensor(std::move(shape), std::move(v));
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  write_bytes(path, encode_container(t));
}

inline AnyTensor load_tensor(const std::filesystem::path& path) { return decode_container(read_bytes(path)); }

inline RTensor load_real(const std::filesystem::path& path) {
  auto t = load_tensor(path);
  if (auto* r = std::get_if<RTensor>(&t)) return std::move(*r);
  throw FormatError(path.string() + ": expected a real (f64) tensor");
}

/// Complex tensor; a real container is promoted.
inline CTensor load_complex(const std::filesystem::path& path) {
  auto t = load_tensor(path);
  if (auto* c = std::get_if<CTensor>(&t)) return std::move(*c);
  const auto& r = std::get<RTensor>(t);
  CTensor c(r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) c[i] = r[i];
  return c;
}

inline SamplingMask load_mask(const std::filesystem::path& path, double accel_nominal = 0.0) {
  RTensor bits = load_real(path);
  SamplingMask probe(bits, 1.0);
  return SamplingMask(std::move(bits), accel_nominal > 0.0 ? accel_nominal : probe.achieved_accel());
}

// ---------------------------------------------------------------------------
// PGM previews
// ---------------------------------------------------------------------------

/// Grey-level image with values in [0,1] (clamped), row-major.
struct GrayImage {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
};

inline GrayImage frame_magnitude(const CTensor& series, std::size_t t, double scale = 1.0) {
  GrayImage g{series.dim(1), series.dim(2), {}};
  g.v.resize(g.h * g.w);
  for (std::size_t p = 0; p < g.v.size(); ++p) g.v[p] = scale * std::abs(series[t * g.h * g.w + p]);
  return g;
}

/// Places images side by side (top aligned, black fill).
inline GrayImage hstack(const std::vector<GrayImage>& parts) {
  GrayImage out;
  for (const auto& p : parts) {
    out.h = std::max(out.h, p.h);
    out.w += p.w;
  }
  out.v.assign(out.h * out.w, 0.0);
  std::size_t x0 = 0;
  for (const auto& p : parts) {
    for (std::size_t y = 0; y < p.h; ++y)
      for (std::size_t x = 0; x < p.w; ++x) out.v[y * out.w + x0 + x] = p.v[y * p.w + x];
    x0 += p.w;
  }
  return out;
}

inline GrayImage vstack(const std::vector<GrayImage>& parts) {
  GrayImage out;
  for (const auto& p : parts) {
    out.w = std::max(out.w, p.w);
    out.h += p.h;
  }
  out.v.assign(out.h * out.w, 0.0);
  std::size_t y0 = 0;
  for (const auto& p : parts) {
    for (std::size_t y = 0; y < p.h; ++y)
      for (std::size_t x = 0; x < p.w; ++x) out.v[(y0 + y) * out.w + x] = p.v[y * p.w + x];
    y0 += p.h;
  }
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (double v : img.v) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::string magic;
  int maxv = 0;
  GrayImage g;
  f >> magic >> g.w >> g.h >> maxv;
  if (magic != "P5" || maxv != 255) throw FormatError("unsupported PGM: " + path.string());
  f.get();
  g.v.resize(g.h * g.w);
  for (auto& v : g.v) v = static_cast<unsigned char>(f.get()) / 255.0;
  return g;
}

/// Real map scaled by 1/vmax into a grey image.
inline GrayImage map_image(const RTensor& map, double vmax) {
  GrayImage g{map.dim(0), map.dim(1), {}};
  g.v.resize(map.size());
  for (std::size_t p = 0; p < map.size(); ++p) g.v[p] = vmax > 0 && std::isfinite(map[p]) ? map[p] / vmax : 0.0;
  return g;
}

// ---------------------------------------------------------------------------
// Network parameters: <prefix>.ktsr (flat f64 vector) + <prefix>.json descriptor
// ---------------------------------------------------------------------------

inline constexpr int kModelVersion = 1;

struct ModelFile {
  std::string kind;  // "secret" or "modl"
  NetworkParams params;
  ModlConfig modl;  // used when kind == "modl"
};

inline nlohmann::json describe(const NetworkParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers())
    layers.push_back({{"kind", to_string(l.kind)},
                      {"in_ch", l.in_ch},
                      {"out_ch", l.out_ch},
                      {"kernel", l.kernel},
                      {"relu", l.relu}});
  return {{"frames", p.config().frames},
          {"depth_levels", p.config().depth_levels},
          {"base_channels", p.config().base_channels},
          {"param_count", p.size()},
          {"layers", layers}};
}

inline void save_model(const std::filesystem::path& prefix, const ModelFile& m) {
  nlohmann::json j{{"version", kModelVersion}, {"kind", m.kind}, {"architecture", describe(m.params)}};
  if (m.kind == "modl")
    j["modl"] = {{"K", m.modl.K}, {"lambda", m.modl.lambda}, {"cg_iters", m.modl.cg_iters}, {"cg_tol", m.modl.cg_tol}};
  std::ofstream f(prefix.string() + ".json");
  if (!f) throw Error("cannot write model descriptor " + prefix.string() + ".json");
  f << j.dump(2) << "\n";
  const auto flat = m.params.flat();
  save_tensor(prefix.string() + ".ktsr", RTensor({flat.size()}, std::vector<double>(flat.begin(), flat.end())));
}

inline ModelFile load_model(const std::filesystem::path& prefix) {
  std::ifstream f(prefix.string() + ".json");
  if (!f) throw Error("cannot open model descriptor " + prefix.string() + ".json");
  nlohmann::json j = nlohmann::json::parse(f);
  if (!j.contains("version")) throw FormatError("model descriptor lacks a version field");
  if (j.at("version").get<int>() != kModelVersion) throw FormatError("unsupported model version");
  ModelFile m;
  m.kind = j.at("kind").get<std::string>();
  const auto& a = j.at("architecture");
  NetConfig cfg{a.at("frames").get<std::size_t>(), a.at("depth_levels").get<std::size_t>(),
                a.at("base_channels").get<std::size_t>()};
  RTensor flat = load_real(prefix.string() + ".ktsr");
  m.params = NetworkParams(cfg, flat.vec());
  if (describe(m.params).at("layers") != a.at("layers")) throw FormatError("model layers do not match descriptor");
  if (m.kind == "modl") {
    const auto& mj = j.at("modl");
    m.modl.K = mj.at("K").get<std::size_t>();
    m.modl.lambda = mj.at("lambda").get<double>();
    m.modl.cg_iters = mj.at("cg_iters").get<std::size_t>();
    m.modl.cg_tol = mj.at("cg_tol").get<double>();
    m.modl.net = cfg;
  } else if (m.kind != "secret") {
    throw FormatError("unknown model kind '" + m.kind + "'");
  }
  return m;
}

inline void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream f(path);
  f << "epoch,train_loss,val_loss,seconds\n";
  f.precision(17);
  for (std::size_t e = 0; e < log.train_loss.size(); ++e)
    f << e << "," << log.train_loss[e] << "," << log.val_loss[e] << "," << log.seconds[e] << "\n";
}

}  // namespace ktsecret

#endif
