#include "fmtk/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "fmtk/factory.hpp"

namespace fmtk {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("checkpoint ends unexpectedly");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_component(Component& component, StoragePrecision precision) {
  Writer w;
  w.put_raw("FMTK", 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(component.kind()));
  w.put_string(component.name());
  const json header = {
      {"type", component.type()}, {"frozen", component.frozen()}, {"config", component.config()}};
  w.put_string(header.dump());
  const ParameterSet params = component.parameters();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    const Tensor& t = e.param->value;
    w.put_string(e.name);
    w.put(static_cast<std::uint8_t>(precision));
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    if (precision == StoragePrecision::F64) {
      w.put_raw(t.data(), t.bytes());
    } else {
      const TensorF f = t.cast<float>();
      w.put_raw(f.data(), f.bytes());
    }
  }
  w.put(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

std::shared_ptr<Component> decode_component(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 1 + 4) throw ChecksumError("checkpoint too short");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored) throw ChecksumError("checkpoint checksum mismatch");

  Reader r(body);
  if (std::memcmp(r.take(4), "FMTK", 4) != 0) throw FormatError("not an FMTK checkpoint");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto kind_tag = r.get<std::uint8_t>();
  if (kind_tag > 3) throw FormatError("unknown component kind tag " + std::to_string(kind_tag));
  const auto kind = static_cast<ComponentKind>(kind_tag);
  const std::string name = r.get_string();
  json header;
  try {
    header = json::parse(r.get_string());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }

  std::shared_ptr<Component> component =
      make_component(kind, header.at("type").get<std::string>(), header.at("config"), name);
  const ParameterSet params = component->parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    throw FormatError("checkpoint stores " + std::to_string(count) + " parameters, component '" +
                      name + "' has " + std::to_string(params.size()));
  }
  // Decode everything before touching the component.
  std::vector<std::pair<Parameter*, Tensor>> staged;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string path = r.get_string();
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    Parameter* target = params.find(path);
    if (!target) throw FormatError("checkpoint parameter '" + path + "' unknown to component");
    if (target->value.shape() != shape) {
      throw FormatError("checkpoint parameter '" + path + "' has shape " + to_string(shape) +
                        ", component expects " + to_string(target->value.shape()));
    }
    Tensor t(shape);
    if (dtype == static_cast<std::uint8_t>(StoragePrecision::F64)) {
      std::memcpy(t.data(), r.take(t.bytes()), t.bytes());
    } else if (dtype == static_cast<std::uint8_t>(StoragePrecision::F32)) {
      TensorF f(shape);
      std::memcpy(f.data(), r.take(f.bytes()), f.bytes());
      t = f.cast<double>();
    } else {
      throw FormatError("unknown dtype tag " + std::to_string(dtype));
    }
    staged.emplace_back(target, std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after parameters");
  for (auto& [p, t] : staged) p->value = std::move(t);
  component->set_frozen(header.value("frozen", false));
  return component;
}

void save_component(Component& component, const std::filesystem::path& path,
                    StoragePrecision precision) {
  const auto bytes = encode_component(component, precision);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::shared_ptr<Component> load_component(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_component(bytes);
}

std::shared_ptr<Component> load_component(const std::filesystem::path& path, ComponentKind expected) {
  auto c = load_component(path);
  if (c->kind() != expected) {
    throw FormatError("checkpoint " + path.string() + " holds a " + std::string(to_string(c->kind())) +
                      ", expected a " + std::string(to_string(expected)));
  }
  return c;
}

}  // namespace fmtk
