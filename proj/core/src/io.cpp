// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "psnas/error.hpp"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace psnas::io {

using json = nlohmann::json;

// ---- seeding ----

std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = root ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::mt19937_64 substream(std::uint64_t root, std::string_view name) {
  return std::mt19937_64(substream_seed(root, name));
}

// ---- raw arrays ----

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write " + path.string());
  return f;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void write_f32(const fs::path& path, const std::vector<float>& values) {
  auto f = open_out(path);
  f.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!f) throw ValidationError("short write to " + path.string());
}

void write_f32(const fs::path& path, const std::vector<double>& values) {
  write_f32(path, std::vector<float>(values.begin(), values.end()));
}

std::vector<double> read_f32(const fs::path& path, std::size_t expected) {
  if (!fs::exists(path)) throw ValidationError("missing file " + path.string());
  const std::string bytes = slurp(path);
  if (bytes.size() % sizeof(float) != 0) {
    throw ValidationError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
  }
  const std::size_t n = bytes.size() / sizeof(float);
  if (expected > 0 && n != expected) {
    throw ValidationError(path.string() + ": expected " + std::to_string(expected) + " values, found " +
                          std::to_string(n));
  }
  std::vector<float> f(n);
  std::memcpy(f.data(), bytes.data(), bytes.size());
  return std::vector<double>(f.begin(), f.end());
}

std::string read_text(const fs::path& path) { return slurp(path); }

void write_text(const fs::path& path, std::string_view text) {
  auto f = open_out(path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'P', 'S', 'N', 'A', 'S', 'C', 'K', '\0'};

class Writer {
 public:
  explicit Writer(std::ofstream& f) : f_(f) {}
  template <typename U>
  void pod(U v) {
    f_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    f_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& f_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : b_(bytes), src_(std::move(source)) {}
  template <typename U>
  U pod() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw ValidationError(src_ + ": truncated checkpoint");
  }
  const std::string& b_;
  std::string src_;
  std::size_t pos_ = 0;
};

}  // namespace

const ArrayRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw ValidationError("checkpoint has no '" + key + "' entry");
  return it->second;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  auto f = open_out(path);
  Writer w(f);
  f.write(kMagic, sizeof(kMagic));
  w.pod(Checkpoint::kVersion);
  w.pod(ck.seed);
  w.pod(ck.step);
  w.pod(static_cast<std::uint32_t>(ck.metadata.size()));
  for (const auto& [k, v] : ck.metadata) {
    w.str(k);
    w.str(v);
  }
  w.pod(static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& a : ck.arrays) {
    w.str(a.name);
    w.pod(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.pod(d);
    f.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  }
  if (!f) throw ValidationError("short write to " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = slurp(path);
  Reader r(bytes, path.string());
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ValidationError(path.string() + ": not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.seed = r.pod<std::uint64_t>();
  ck.step = r.pod<std::uint64_t>();
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ck.metadata[k] = r.str();
  }
  const auto n_arrays = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    ArrayRecord a;
    a.name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw ValidationError(path.string() + ": array '" + a.name + "' has implausible rank");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(r.pod<std::uint32_t>());
      numel *= a.shape.back();
    }
    if (numel > bytes.size()) throw ValidationError(path.string() + ": truncated checkpoint");
    a.data.resize(numel);
    r.raw(a.data.data(), numel * sizeof(float));
    ck.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw ValidationError(path.string() + ": trailing bytes after the last array");
  return ck;
}

template <typename T>
void store_tensor(Checkpoint& ck, const std::string& name, const ad::Tensor<T>& t) {
  ArrayRecord a;
  a.name = name;
  for (auto d : t.shape()) a.shape.push_back(static_cast<std::uint32_t>(d));
  a.data.assign(t.data().begin(), t.data().end());
  ck.arrays.push_back(std::move(a));
}

template <typename T>
void restore_tensor(const Checkpoint& ck, const std::string& name, ad::Tensor<T>& t) {
  const ArrayRecord* a = ck.find(name);
  if (!a) throw ValidationError("checkpoint is missing array '" + name + "'");
  ad::Shape shape(a->shape.begin(), a->shape.end());
  if (shape != t.shape()) {
    throw ValidationError("checkpoint array '" + name + "' has shape " + ad::shape_str(shape) + ", expected " +
                          ad::shape_str(t.shape()));
  }
  auto dst = t.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a->data[i]);
}

template <typename T>
void store_params(Checkpoint& ck, const nn::ParamSet<T>& params, const std::string& prefix) {
  for (const auto& w : params.weights) store_tensor(ck, prefix + "/" + w.name, w.tensor);
  for (const auto& b : params.buffers) store_tensor(ck, prefix + "/" + b.name, b.tensor);
}

template <typename T>
void restore_params(const Checkpoint& ck, nn::ParamSet<T>& params, const std::string& prefix) {
  for (auto& w : params.weights) restore_tensor(ck, prefix + "/" + w.name, w.tensor);
  for (auto& b : params.buffers) restore_tensor(ck, prefix + "/" + b.name, b.tensor);
}

template <typename T>
void store_adam(Checkpoint& ck, const opt::AdamState<T>& state, const std::string& prefix) {
  ck.metadata[prefix + ".step"] = std::to_string(state.step);
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    const auto n = static_cast<std::uint32_t>(state.m[i].size());
    ck.arrays.push_back({prefix + "/m" + std::to_string(i), {n}, std::vector<float>(state.m[i].begin(), state.m[i].end())});
    ck.arrays.push_back({prefix + "/v" + std::to_string(i), {n}, std::vector<float>(state.v[i].begin(), state.v[i].end())});
  }
}

template <typename T>
void restore_adam(const Checkpoint& ck, opt::AdamState<T>& state, const std::string& prefix) {
  state.step = std::stoull(ck.meta(prefix + ".step"));
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    for (auto* slot : {&state.m[i], &state.v[i]}) {
      const std::string name = prefix + (slot == &state.m[i] ? "/m" : "/v") + std::to_string(i);
      const ArrayRecord* a = ck.find(name);
      if (!a || a->data.size() != slot->size()) throw ValidationError("checkpoint optimizer state '" + name + "' mismatch");
      slot->assign(a->data.begin(), a->data.end());
    }
  }
}

#define PSNAS_INSTANTIATE_IO(T)                                                                   \
  template void store_tensor<T>(Checkpoint&, const std::string&, const ad::Tensor<T>&);          \
  template void restore_tensor<T>(const Checkpoint&, const std::string&, ad::Tensor<T>&);        \
  template void store_params<T>(Checkpoint&, const nn::ParamSet<T>&, const std::string&);        \
  template void restore_params<T>(const Checkpoint&, nn::ParamSet<T>&, const std::string&);      \
  template void store_adam<T>(Checkpoint&, const opt::AdamState<T>&, const std::string&);        \
  template void restore_adam<T>(const Checkpoint&, opt::AdamState<T>&, const std::string&);

PSNAS_INSTANTIATE_IO(float)
PSNAS_INSTANTIATE_IO(double)

// ---- scene container ----

void write_scene(const fs::path& dir, const scene::PSObservation& obs) {
  fs::create_directories(dir);
  json meta = {{"images", obs.count}, {"height", obs.height}, {"width", obs.width}};
  meta["ground_truth"] = obs.scene.has_value() && obs.lights.has_value();
  write_text(dir / "scene.json", meta.dump(2) + "\n");
  write_f32(dir / "images.f32", obs.images);
  write_f32(dir / "mask.f32", std::vector<double>(obs.mask.begin(), obs.mask.end()));
  if (obs.scene) {
    write_f32(dir / "normals.f32", obs.scene->normals);
    write_f32(dir / "albedo.f32", obs.scene->albedo);
  }
  if (obs.lights) {
    std::vector<double> l;
    for (const auto& d : obs.lights->directions) l.insert(l.end(), {d.x, d.y, d.z});
    write_f32(dir / "lights.f32", l);
    write_f32(dir / "intensities.f32", obs.lights->intensities);
  }
}

scene::PSObservation read_scene(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("scene directory " + dir.string() + " does not exist");
  const fs::path meta_path = dir / "scene.json";
  if (!fs::exists(meta_path)) throw ValidationError("missing file " + meta_path.string());
  json meta;
  try {
    meta = json::parse(read_text(meta_path));
  } catch (const json::exception& e) {
    throw ValidationError(meta_path.string() + ": " + e.what());
  }
  scene::PSObservation obs;
  try {
    obs.count = meta.at("images").get<std::size_t>();
    obs.height = meta.at("height").get<std::size_t>();
    obs.width = meta.at("width").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(meta_path.string() + ": " + e.what());
  }
  if (obs.count == 0 || obs.height == 0 || obs.width == 0) {
    throw ValidationError(meta_path.string() + ": image count and size must be positive");
  }
  const std::size_t hw = obs.pixels();
  obs.images = read_f32(dir / "images.f32", obs.count * hw);
  for (double v : obs.images) {
    if (!std::isfinite(v) || v < 0) throw ValidationError((dir / "images.f32").string() + ": negative or non-finite value");
  }
  const auto mask = read_f32(dir / "mask.f32", hw);
  obs.mask.resize(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    if (mask[p] != 0 && mask[p] != 1) throw ValidationError((dir / "mask.f32").string() + ": values must be 0 or 1");
    obs.mask[p] = mask[p] != 0;
  }
  if (fs::exists(dir / "normals.f32")) {
    scene::ObjectScene s;
    s.height = obs.height;
    s.width = obs.width;
    s.normals = read_f32(dir / "normals.f32", 3 * hw);
    s.albedo = fs::exists(dir / "albedo.f32") ? read_f32(dir / "albedo.f32", hw) : std::vector<double>(hw, 1.0);
    s.mask = obs.mask;
    // f32 storage loses unit length in the last bits.
    for (std::size_t p = 0; p < hw; ++p)
      if (s.mask[p]) s.set_normal(p, s.normal(p).normalized());
    obs.scene = std::move(s);
  }
  if (fs::exists(dir / "lights.f32")) {
    const auto l = read_f32(dir / "lights.f32", 3 * obs.count);
    scene::LightSet ls;
    for (std::size_t j = 0; j < obs.count; ++j) ls.directions.push_back(scene::Vec3{l[3 * j], l[3 * j + 1], l[3 * j + 2]}.normalized());
    ls.intensities = read_f32(dir / "intensities.f32", obs.count);
    obs.lights = std::move(ls);
  }
  return obs;
}

}  // namespace psnas::io
