#include "edgeforge/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace edgeforge {

namespace {

constexpr char kMagic[4] = {'E', 'F', 'C', 'K'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) {
      throw std::runtime_error("checkpoint: truncated file");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
              << (8 * i);
    }
    pos += 8;
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kCheckpointVersion);
  auto entries = params.entries();
  put_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const ParamTensor* p : entries) {
    put_u32(buf, static_cast<std::uint32_t>(p->name.size()));
    buf.append(p->name);
    buf.push_back(0);  // dtype tag: f64
    put_u32(buf, 2);
    put_u32(buf, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(buf, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        put_f64(buf, p->value(r, c));
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};
  if (r.bytes(4) != std::string(kMagic, 4)) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  std::uint32_t count = r.u32();
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint8_t dtype = r.u8();
    if (dtype != 0) {
      throw std::runtime_error("checkpoint: unknown dtype tag " +
                               std::to_string(dtype));
    }
    std::uint32_t ndim = r.u32();
    if (ndim != 2) {
      throw std::runtime_error("checkpoint: expected 2-d tensor, got ndim " +
                               std::to_string(ndim));
    }
    std::uint32_t rows = r.u32();
    std::uint32_t cols = r.u32();
    Matrix m(rows, cols);
    for (std::uint32_t rr = 0; rr < rows; ++rr) {
      for (std::uint32_t cc = 0; cc < cols; ++cc) m(rr, cc) = r.f64();
    }
    params.add(name, std::move(m));
  }
  return params;
}

}  // namespace edgeforge
