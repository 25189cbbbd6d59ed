#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "mmseg/network.hpp"

namespace mmseg {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'S', 'E', 'G', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::string& bytes, std::size_t length) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < length; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void integer(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void real(double v) { integer(std::bit_cast<std::uint64_t>(v)); }
  void string(const std::string& s) {
    integer(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw std::runtime_error("model file truncated at byte " + std::to_string(pos_));
  }
  template <typename T>
  T integer() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double real() { return std::bit_cast<double>(integer<std::uint64_t>()); }
  std::string string(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

SegModel decode(const std::string& buf, const NetConfig* expected) {
  if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a model file (bad magic)");
  }
  const std::size_t body = buf.size() - 8;
  {
    Reader r(buf, buf.size());
    r.string(body);
    const auto stored = r.integer<std::uint64_t>();
    if (stored != fnv1a(buf, body)) throw std::runtime_error("model file checksum mismatch (corrupt file)");
  }
  Reader r(buf, body);
  r.string(sizeof(kMagic));
  const auto version = r.integer<std::uint32_t>();
  if (version != kVersion) throw std::runtime_error("unsupported model file version " + std::to_string(version));
  const auto config_len = r.integer<std::uint64_t>();
  NetConfig config = nlohmann::json::parse(r.string(config_len)).get<NetConfig>();
  if (expected && !(config == *expected)) {
    throw std::runtime_error("model config mismatch: " + describe_config_diff(*expected, config));
  }
  SegModel model = SegModel::init(config, 0);
  ParameterList params = model.parameters();
  const auto count = r.integer<std::uint64_t>();
  if (count != params.size()) {
    throw std::runtime_error("model file holds " + std::to_string(count) + " parameters, config implies " +
                             std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.string(r.integer<std::uint32_t>());
    if (name != p.name) throw std::runtime_error("model file parameter '" + name + "' where '" + p.name + "' expected");
    const auto rank = r.integer<std::uint32_t>();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<Index>(r.integer<std::int64_t>()));
    if (shape != p.tensor.shape()) {
      throw std::runtime_error("parameter '" + name + "' has shape " + to_string(shape) + ", expected " +
                               to_string(p.tensor.shape()));
    }
    Array& v = p.tensor.mutable_values();
    for (Index i = 0; i < v.size(); ++i) v[i] = r.real();
  }
  if (r.position() != body) throw std::runtime_error("trailing bytes in model file");
  return model;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_model(const SegModel& model, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.integer(kVersion);
  const std::string config = nlohmann::json(model.config).dump();
  w.integer(static_cast<std::uint64_t>(config.size()));
  w.bytes(config.data(), config.size());
  const ParameterList params = model.parameters();
  w.integer(static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    w.string(p.name);
    w.integer(static_cast<std::uint32_t>(p.tensor.rank()));
    for (Index e : p.tensor.shape()) w.integer(static_cast<std::int64_t>(e));
    for (Index i = 0; i < p.tensor.numel(); ++i) w.real(p.tensor.values()[i]);
  }
  w.integer(fnv1a(w.buffer(), w.buffer().size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw std::runtime_error("failed writing model file " + path.string());
}

SegModel load_model(const std::filesystem::path& path) { return decode(read_file(path), nullptr); }

SegModel load_model(const std::filesystem::path& path, const NetConfig& expected) {
  return decode(read_file(path), &expected);
}

}  // namespace mmseg
