#include "unisal/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "unisal/errors.hpp"

namespace unisal {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw LoadError("checkpoint truncated in " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string get_string(std::istream& in, std::uint64_t length, const std::string& what) {
  if (length > (1ull << 32)) throw LoadError("checkpoint " + what + " length is implausible");
  std::string s(length, '\0');
  in.read(s.data(), static_cast<std::streamsize>(length));
  if (static_cast<std::uint64_t>(in.gcount()) != length) throw LoadError("checkpoint truncated in " + what);
  return s;
}

std::string blob_label(const std::string& name, int tag) {
  return "'" + name + "' (" + (tag == kSharedTag ? std::string("shared") : "domain " + std::to_string(tag)) + ")";
}

struct Blob {
  std::string name;
  int tag = kSharedTag;
  ParamRole role = ParamRole::Parameter;
  Shape shape;
  std::vector<double> values;
};

KeyValues read_header(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw LoadError("not a checkpoint file");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto length = get<std::uint64_t>(in, "manifest length");
  return KeyValues::parse(get_string(in, length, "manifest"), "checkpoint manifest");
}

Blob read_blob(std::istream& in, std::uint64_t index) {
  const std::string where = "blob " + std::to_string(index);
  Blob b;
  b.name = get_string(in, get<std::uint32_t>(in, where + " name length"), where + " name");
  b.tag = get<std::int32_t>(in, where + " domain tag");
  const auto kind = get<std::uint8_t>(in, where + " kind");
  if (kind > 1) throw LoadError("blob " + blob_label(b.name, b.tag) + " has unknown kind " + std::to_string(kind));
  b.role = kind == 0 ? ParamRole::Parameter : ParamRole::Buffer;
  const auto ndim = get<std::uint32_t>(in, where + " rank");
  if (ndim > 8) throw LoadError("blob " + blob_label(b.name, b.tag) + " has implausible rank");
  for (std::uint32_t i = 0; i < ndim; ++i) b.shape.push_back(get<std::uint64_t>(in, where + " shape"));
  const auto count = get<std::uint64_t>(in, where + " count");
  if (count != shape_numel(b.shape)) {
    throw LoadError("blob " + blob_label(b.name, b.tag) + " value count does not match its shape");
  }
  b.values.resize(count);
  for (auto& v : b.values) v = get<double>(in, where + " values");
  return b;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  return in;
}

void load_into(UnisalModel& model, std::istream& in) {
  const auto count = get<std::uint64_t>(in, "blob count");
  std::map<std::pair<std::string, int>, ParamEntry*> by_key;
  for (auto& e : model.store().entries()) by_key[{e.name, e.domain}] = &e;
  std::map<std::pair<std::string, int>, bool> seen;
  // Everything is validated before any value is copied, so a failed load
  // leaves the model untouched.
  std::vector<std::pair<ParamEntry*, std::vector<double>>> pending;
  for (std::uint64_t i = 0; i < count; ++i) {
    Blob b = read_blob(in, i);
    auto it = by_key.find({b.name, b.tag});
    if (it == by_key.end()) throw LoadError("blob " + blob_label(b.name, b.tag) + " does not exist in the model");
    ParamEntry& e = *it->second;
    if (e.role != b.role) throw LoadError("blob " + blob_label(b.name, b.tag) + " has the wrong kind");
    if (e.value.shape() != b.shape) {
      throw LoadError("blob " + blob_label(b.name, b.tag) + " has shape " + shape_string(b.shape) +
                      " but the model expects " + shape_string(e.value.shape()));
    }
    if (!seen.emplace(std::make_pair(b.name, b.tag), true).second) {
      throw LoadError("blob " + blob_label(b.name, b.tag) + " appears twice");
    }
    pending.emplace_back(&e, std::move(b.values));
  }
  for (const auto& e : model.store().entries()) {
    if (!seen.count({e.name, e.domain})) throw LoadError("checkpoint lacks blob " + blob_label(e.name, e.domain));
  }
  for (auto& [entry, values] : pending) {
    auto dst = entry->value.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

}  // namespace

KeyValues checkpoint_manifest(const UnisalModel& model) {
  KeyValues kv;
  model.config().to_key_values(kv);
  const auto& domains = model.registry().domains();
  kv.set("domain.count", domains.size());
  for (const auto& d : domains) {
    const std::string p = "domain." + std::to_string(d.index) + ".";
    kv.set(p + "name", d.name);
    kv.set(p + "modality", to_string(d.modality));
    kv.set(p + "fps", d.native_fps);
    kv.set(p + "height", d.input_resolution.height);
    kv.set(p + "width", d.input_resolution.width);
  }
  return kv;
}

std::shared_ptr<DomainRegistry> registry_from_manifest(const KeyValues& kv) {
  auto reg = std::make_shared<DomainRegistry>();
  const std::size_t n = kv.get_size("domain.count", 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "domain." + std::to_string(i) + ".";
    try {
      reg->add(kv.require(p + "name"), parse_modality(kv.require(p + "modality")), kv.get_size(p + "fps", 0),
               {kv.get_size(p + "height", 0), kv.get_size(p + "width", 0)});
    } catch (const Error& e) {
      throw LoadError(std::string("checkpoint domain list: ") + e.what());
    }
  }
  return reg;
}

void save_checkpoint(const UnisalModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string manifest = checkpoint_manifest(model).serialize();
  put<std::uint64_t>(out, manifest.size());
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  const auto& entries = model.store().entries();
  put<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::int32_t>(out, e.domain);
    put<std::uint8_t>(out, e.role == ParamRole::Parameter ? 0 : 1);
    const Shape& shape = e.value.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(out, d);
    const auto values = e.value.data();
    put<std::uint64_t>(out, values.size());
    for (double v : values) put<double>(out, v);
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

KeyValues read_checkpoint_manifest(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  return read_header(in);
}

UnisalModel load_checkpoint(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const KeyValues manifest = read_header(in);
  ModelConfig config;
  try {
    config = ModelConfig::from_key_values(manifest);
  } catch (const Error& e) {
    throw LoadError(std::string("checkpoint configuration: ") + e.what());
  }
  UnisalModel model = UnisalModel::build(config, registry_from_manifest(manifest), 0);
  load_into(model, in);
  return model;
}

void load_parameters(UnisalModel& model, const std::filesystem::path& path) {
  auto in = open_for_read(path);
  read_header(in);
  load_into(model, in);
}

}  // namespace unisal
