#include "tempo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace tempo {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out;
  put_u32(out, kCheckpointVersion);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (auto d : t.shape()) put_u64(out, d);
    for (float f : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  auto version = in.u(4, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  auto count = in.u(8, "tensor count");
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name_len = in.u(8, "name length");
    std::string name = in.take(name_len, "name");
    auto rank = in.u(8, "rank");
    if (rank == 0 || rank > 8) throw CheckpointError("bad rank for '" + name + "'");
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(in.u(8, "shape"));
    std::vector<float> data(shape_numel(shape));
    for (auto& f : data) f = std::bit_cast<float>(static_cast<std::uint32_t>(in.u(4, "payload")));
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  if (!in.done()) throw CheckpointError("trailing bytes after last checkpoint record");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  auto bytes = encode_checkpoint(tensors);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("failed writing " + path.string());
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

template <typename T>
NamedTensors to_float(const std::vector<NamedParameter<T>>& tensors) {
  NamedTensors out;
  for (const auto& p : tensors) out.push_back({p.name, p.tensor.template cast<float>()});
  return out;
}

template <typename T>
std::vector<NamedParameter<T>> from_float(const NamedTensors& tensors) {
  std::vector<NamedParameter<T>> out;
  for (const auto& p : tensors) out.push_back({p.name, p.tensor.template cast<T>()});
  return out;
}

template <typename T>
void load_parameters(const ParameterList<T>& params, const NamedTensors& tensors) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  for (const auto& p : params.items()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for '" + p.name + "': checkpoint " +
                            shape_str(it->second->shape()) + ", model " +
                            shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor;
    auto src = it->second->data();
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<T>(src[i]);
  }
}

template NamedTensors to_float(const std::vector<NamedParameter<float>>&);
template NamedTensors to_float(const std::vector<NamedParameter<double>>&);
template std::vector<NamedParameter<float>> from_float(const NamedTensors&);
template std::vector<NamedParameter<double>> from_float(const NamedTensors&);
template void load_parameters(const ParameterList<float>&, const NamedTensors&);
template void load_parameters(const ParameterList<double>&, const NamedTensors&);

}  // namespace tempo
