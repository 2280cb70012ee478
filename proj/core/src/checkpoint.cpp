// SPDX-License-Identifier: Apache-2.0
#include "rway/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include "rway/error.hpp"

namespace rway {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'W', 'A', 'Y'};
constexpr std::size_t kAlign = 256;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  std::size_t size() const { return bytes_.size(); }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T value;
    take(&value, sizeof(T), what);
    return value;
  }
  void take(void* out, std::size_t size, const char* what) {
    if (size > bytes_.size() - pos_) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(out, bytes_.data() + pos_, size);
    pos_ += size;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.put(static_cast<std::uint32_t>(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put(static_cast<std::uint32_t>(t.rank()));
  for (auto dim : t.shape()) w.put(static_cast<std::uint64_t>(dim));
  const auto data = t.data();
  w.put_bytes(data.data(), data.size() * sizeof(double));
}

std::uint32_t crc_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const nlohmann::json header_json = {
      {"model", state.model.config()}, {"train", state.config}, {"step", state.step}};
  std::string header = header_json.dump();
  const std::size_t fixed = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  const std::size_t unpadded = fixed + header.size();
  header.append((kAlign - unpadded % kAlign) % kAlign, ' ');

  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(header.size()));
  w.put_bytes(header.data(), header.size());
  const std::size_t section_start = w.size();

  const auto params = state.model.parameters();
  w.put(static_cast<std::uint64_t>(3 * params.size() + 1));
  for (const auto& p : params) write_tensor(w, p.name, p.tensor);
  for (std::size_t k = 0; k < params.size(); ++k) {
    write_tensor(w, "adam.m." + params[k].name, state.adam_m[k]);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    write_tensor(w, "adam.v." + params[k].name, state.adam_v[k]);
  }
  const auto& hist = state.loss_history;
  write_tensor(w, "train.loss_history",
               Tensor({hist.size()}, std::vector<double>(hist.begin(), hist.end())));
  w.put(crc_of(w.bytes().data() + section_start, w.size() - section_start));

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.size()));
    if (!out) throw InputError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& model_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  Reader r(bytes);

  char magic[4];
  r.take(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  if (header_len > bytes.size()) throw FormatError("checkpoint truncated in header");
  std::string header(header_len, '\0');
  r.take(header.data(), header.size(), "header");

  ModelConfig mcfg;
  TrainConfig tcfg;
  std::size_t step = 0;
  try {
    const auto j = nlohmann::json::parse(header);
    mcfg = j.at("model").get<ModelConfig>();
    tcfg = j.at("train").get<TrainConfig>();
    step = j.at("step").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }

  const std::size_t section_start = r.pos();
  if (bytes.size() < section_start + sizeof(std::uint32_t)) {
    throw FormatError("checkpoint truncated before tensor section");
  }
  const std::size_t section_end = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + section_end, sizeof(stored_crc));

  std::map<std::string, Tensor> tensors;
  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    if (name_len > section_end - r.pos()) throw FormatError("checkpoint truncated in tensor name");
    std::string name(name_len, '\0');
    r.take(name.data(), name.size(), "tensor name");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank > 8) throw FormatError("tensor " + name + " has implausible rank");
    Shape shape(rank);
    for (auto& dim : shape) dim = static_cast<std::size_t>(r.get<std::uint64_t>("tensor dims"));
    const std::size_t numel = shape_numel(shape);
    if (numel > (section_end - r.pos()) / sizeof(double)) {
      throw FormatError("checkpoint truncated in tensor " + name);
    }
    std::vector<double> data(numel);
    r.take(data.data(), numel * sizeof(double), "tensor payload");
    if (!tensors.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate tensor " + name);
    }
  }
  if (r.pos() != section_end) throw FormatError("unexpected bytes after tensor section");
  if (crc_of(bytes.data() + section_start, section_end - section_start) != stored_crc) {
    throw FormatError("checkpoint CRC mismatch");
  }

  const ModelConfig target = model_override.value_or(mcfg);
  TrainState state(Model(target), tcfg);
  state.step = step;
  const auto params = state.model.parameters();
  if (tensors.size() != 3 * params.size() + 1) {
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, config expects " + std::to_string(3 * params.size() + 1));
  }
  auto restore = [&](const std::string& name, Tensor dst) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint lacks tensor " + name);
    if (it->second.shape() != dst.shape()) {
      throw FormatError("tensor " + name + " has shape " + shape_str(it->second.shape()) +
                        ", config expects " + shape_str(dst.shape()));
    }
    const auto src = it->second.data();
    auto out = dst.mutable_data();
    std::copy(src.begin(), src.end(), out.begin());
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    restore(params[k].name, params[k].tensor);
    restore("adam.m." + params[k].name, state.adam_m[k]);
    restore("adam.v." + params[k].name, state.adam_v[k]);
  }
  auto hist = tensors.find("train.loss_history");
  if (hist == tensors.end() || hist->second.rank() != 1) {
    throw FormatError("checkpoint lacks train.loss_history");
  }
  state.loss_history.assign(hist->second.data().begin(), hist->second.data().end());
  return state;
}

}  // namespace rway
