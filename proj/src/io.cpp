#include "ctgv/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace ctgv {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'G', 'V', 'T', 'N', 'S', 'R'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
  check(pos + sizeof(T) <= in.size(), "tensor blob truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
  check(t.defined(), "cannot save an undefined tensor");
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kVersion);
  put<uint32_t>(out, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put<int64_t>(out, t.dim(i));
  for (double v : t.values()) put<double>(out, v);
  write_file(path, out);
}

Tensor load_tensor(const std::string& path) {
  std::string in = read_file(path);
  check(in.size() >= sizeof(kMagic) &&
            std::memcmp(in.data(), kMagic, sizeof(kMagic)) == 0,
        "not a tensor blob: " + path);
  size_t pos = sizeof(kMagic);
  uint32_t version = take<uint32_t>(in, pos);
  check(version == kVersion,
        "unknown tensor blob version " + std::to_string(version));
  uint32_t rank = take<uint32_t>(in, pos);
  check(rank <= 16, "implausible tensor rank");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = take<int64_t>(in, pos);
  int64_t n = numel_of(shape);
  check(pos + static_cast<size_t>(n) * sizeof(double) == in.size(),
        "tensor blob size mismatch: " + path);
  std::vector<double> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] =
      take<double>(in, pos);
  return Tensor(shape, std::move(data));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  check(!in.bad(), "read failed on " + path);
  return content;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  check(out.good(), "write failed on " + path);
}

}  // namespace ctgv
