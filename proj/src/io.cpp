#include "mgpvae/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mgpvae/errors.hpp"

namespace mgpvae::io {

static_assert(std::endian::native == std::endian::little, "formats assume a little-endian host");

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void floats(std::span<const float> v) { raw(v.data(), v.size() * 4); }
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    out.insert(out.end(), c, c + n);
  }
  Bytes out;
};

class Reader {
 public:
  Reader(const Bytes& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4, "u32");
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8, "u64");
    return v;
  }
  std::string text(const char* what) {
    const std::uint32_t n = u32();
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t count, const char* what) {
    if (count > remaining() / 4) fail(std::string("truncated ") + what);
    std::vector<float> v(count);
    raw(v.data(), count * 4, what);
    return v;
  }
  void magic(const char* expected) {
    char m[4];
    raw(m, 4, "magic");
    if (std::memcmp(m, expected, 4) != 0) fail(std::string("bad magic, expected ") + expected);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void finish() {
    if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(origin_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (n > remaining()) fail("truncated " + what);
  }
  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  const Bytes& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string cell_file(std::size_t p, std::size_t m) {
  return "p" + std::to_string(p) + "_m" + std::to_string(m) + ".mgpv";
}

}  // namespace

Bytes encode_volume(const Volume& volume) {
  std::size_t n = 1;
  for (auto e : volume.extents) n *= e;
  if (n != volume.voxels.size())
    throw ShapeError("volume extents do not match its voxel count");
  Writer w;
  w.raw("MGPV", 4);
  w.u32(kVolumeVersion);
  w.u32(kDtypeF32);
  for (auto e : volume.extents) w.u32(e);
  w.floats(volume.voxels);
  return std::move(w.out);
}

Volume decode_volume(const Bytes& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.magic("MGPV");
  if (auto v = r.u32(); v != kVolumeVersion) r.fail("unsupported volume version " + std::to_string(v));
  if (auto d = r.u32(); d != kDtypeF32) r.fail("unsupported dtype code " + std::to_string(d));
  Volume vol;
  std::size_t n = 1;
  for (auto& e : vol.extents) {
    e = r.u32();
    n *= e;
  }
  if (n * 4 != r.remaining())
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, extents need " +
           std::to_string(n * 4));
  vol.voxels = r.floats(n, "payload");
  return vol;
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file(const fs::path& path, const Bytes& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  // Write-then-rename so an interrupted write never leaves a truncated file.
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

void write_volume(const fs::path& path, const Volume& volume) {
  write_file(path, encode_volume(volume));
}

Volume read_volume(const fs::path& path) { return decode_volume(read_file(path), path.string()); }

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  os << "#patient\tmodality\tpath\tpresent\n";
  for (const auto& e : entries)
    os << e.patient << '\t' << e.modality << '\t' << e.path << '\t' << (e.present ? 1 : 0) << '\n';
  return os.str();
}

std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& origin) {
  std::vector<ManifestEntry> out;
  std::istringstream is(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    long long p = -1, m = -1;
    int present = -1;
    ManifestEntry e;
    std::string extra;
    ls >> p >> m >> e.path >> present;
    if (ls.fail() || (ls >> extra) || p < 0 || m < 0 || (present != 0 && present != 1))
      throw ValidationError(origin + ":" + std::to_string(number) +
                            ": expected 'patient modality path present(0|1)'");
    e.patient = static_cast<std::size_t>(p);
    e.modality = static_cast<std::size_t>(m);
    e.present = present == 1;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> write_dataset(const fs::path& dir, const ViewGrid& grid) {
  grid.validate();
  std::vector<ManifestEntry> entries;
  for (std::size_t p = 0; p < grid.patients; ++p)
    for (std::size_t m = 0; m < grid.modalities; ++m) {
      ManifestEntry e{p, m, "", grid.mask.present(p, m)};
      e.path = std::string(e.present ? "volumes/" : "heldout/") + cell_file(p, m);
      if (!grid.at(p, m).empty()) write_volume(dir / e.path, grid.at(p, m));
      entries.push_back(std::move(e));
    }
  write_text(dir / kManifestName, format_manifest(entries));
  return entries;
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  auto entries = parse_manifest(read_text(manifest_path), manifest_path.string());
  if (entries.empty()) throw ValidationError(manifest_path.string() + ": no entries");
  std::size_t patients = 0, modalities = 0;
  for (const auto& e : entries) {
    patients = std::max(patients, e.patient + 1);
    modalities = std::max(modalities, e.modality + 1);
  }
  if (entries.size() != patients * modalities)
    throw ValidationError(manifest_path.string() + ": expected one entry per cell of a " +
                          std::to_string(patients) + "x" + std::to_string(modalities) + " grid, got " +
                          std::to_string(entries.size()));
  Dataset ds;
  ds.grid.patients = patients;
  ds.grid.modalities = modalities;
  ds.grid.volumes.resize(patients * modalities);
  ds.grid.mask = gp::PresenceMask(patients, modalities, false);
  ds.has_truth.assign(patients * modalities, false);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : entries) {
    if (!seen.insert({e.patient, e.modality}).second)
      throw ValidationError(manifest_path.string() + ": duplicate cell " +
                            std::to_string(e.patient) + ":" + std::to_string(e.modality));
    ds.grid.mask.set(e.patient, e.modality, e.present);
    const fs::path file = dir / e.path;
    if (!e.present && !fs::exists(file)) continue;
    Volume v = read_volume(file);
    if (v.extents[0] != v.extents[1] || v.extents[1] != v.extents[2])
      throw ValidationError(file.string() + ": volume is not cubic");
    if (ds.grid.side == 0) ds.grid.side = v.extents[0];
    if (v.extents[0] != ds.grid.side)
      throw ValidationError(file.string() + ": side " + std::to_string(v.extents[0]) +
                            " differs from the dataset side " + std::to_string(ds.grid.side));
    ds.grid.volumes[e.patient * modalities + e.modality] = std::move(v);
    ds.has_truth[e.patient * modalities + e.modality] = true;
  }
  ds.grid.validate();
  return ds;
}

Bytes encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw("MGPC", 4);
  w.u32(kCheckpointVersion);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(c.cursor.stage));
  w.u32(static_cast<std::uint32_t>(c.cursor.epoch));
  w.u64(c.adam_step);
  w.text(c.config_text);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    std::size_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.values.size()) throw ShapeError("checkpoint tensor " + t.name + " shape/payload mismatch");
    w.text(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(d);
    w.floats(t.values);
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const Bytes& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.magic("MGPC");
  if (auto v = r.u32(); v != kCheckpointVersion)
    r.fail("unsupported checkpoint version " + std::to_string(v));
  Checkpoint c;
  c.seed = r.u64();
  c.cursor.stage = r.u32();
  c.cursor.epoch = r.u32();
  c.adam_step = r.u64();
  c.config_text = r.text("config text");
  const std::uint32_t count = r.u32();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray t;
    t.name = r.text("tensor name");
    if (!names.insert(t.name).second) r.fail("duplicate tensor " + t.name);
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("tensor " + t.name + " has implausible rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.u32());
      n *= t.shape.back();
    }
    t.values = r.floats(n, t.name.c_str());
    c.tensors.push_back(std::move(t));
  }
  r.finish();
  return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

Checkpoint snapshot(const train::Trainer& trainer, const std::string& config_text) {
  Checkpoint c;
  c.seed = trainer.seed();
  c.cursor = trainer.cursor();
  c.adam_step = trainer.adam().step;
  c.config_text = config_text;
  const auto params = trainer.model().named_parameters();
  auto shape_of = [](const ad::Tensor& t) {
    std::vector<std::uint32_t> s;
    for (auto d : t.shape()) s.push_back(static_cast<std::uint32_t>(d));
    return s;
  };
  for (const auto& p : params) {
    auto d = p.tensor.data();
    c.tensors.push_back({p.name, shape_of(p.tensor), std::vector<float>(d.begin(), d.end())});
  }
  const auto& adam = trainer.adam();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.tensors.push_back({"adam.m." + params[i].name, shape_of(params[i].tensor), adam.m[i]});
  for (std::size_t i = 0; i < params.size(); ++i)
    c.tensors.push_back({"adam.v." + params[i].name, shape_of(params[i].tensor), adam.v[i]});
  return c;
}

train::AdamState load_into(const Checkpoint& ckpt, train::Model& model) {
  std::map<std::string, const NamedArray*> table;
  for (const auto& t : ckpt.tensors) table[t.name] = &t;
  auto params = model.named_parameters();

  std::set<std::string> expected;
  for (const auto& p : params) {
    expected.insert(p.name);
    expected.insert("adam.m." + p.name);
    expected.insert("adam.v." + p.name);
  }
  std::vector<std::string> unknown, missing;
  for (const auto& [name, _] : table)
    if (!expected.count(name)) unknown.push_back(name);
  for (const auto& name : expected)
    if (!table.count(name)) missing.push_back(name);
  if (!unknown.empty() || !missing.empty()) {
    std::string msg = "checkpoint tensor set does not match the model:";
    for (const auto& n : unknown) msg += " unknown " + n + ";";
    for (const auto& n : missing) msg += " missing " + n + ";";
    throw ValidationError(msg);
  }

  auto fetch = [&](const std::string& name, const ad::Tensor& like) -> const std::vector<float>& {
    const NamedArray& t = *table.at(name);
    ad::Shape s(t.shape.begin(), t.shape.end());
    if (s != like.shape())
      throw ShapeError("checkpoint tensor " + name + " has shape " + ad::to_string(s) +
                       ", model expects " + ad::to_string(like.shape()));
    return t.values;
  };
  train::AdamState adam;
  adam.step = ckpt.adam_step;
  for (auto& p : params) {
    const auto& values = fetch(p.name, p.tensor);
    auto dst = p.tensor.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
    adam.m.push_back(fetch("adam.m." + p.name, p.tensor));
    adam.v.push_back(fetch("adam.v." + p.name, p.tensor));
  }
  return adam;
}

}  // namespace mgpvae::io
