#include "fusecap/checksum.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "fusecap/errors.hpp"

namespace fusecap {
namespace {

struct DigestCtx {
  DigestCtx() : ctx(EVP_MD_CTX_new()) {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
      throw StateError("cannot initialise SHA-256");
    }
  }
  ~DigestCtx() { EVP_MD_CTX_free(ctx); }
  DigestCtx(const DigestCtx&) = delete;
  DigestCtx& operator=(const DigestCtx&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx, data, n); }
  std::array<unsigned char, 32> digest() {
    std::array<unsigned char, 32> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md.data(), &len);
    return md;
  }
  std::string hex() {
    const auto md = digest();
    std::string out;
    char buf[3];
    for (unsigned char b : md) {
      std::snprintf(buf, sizeof buf, "%02x", b);
      out += buf;
    }
    return out;
  }

  EVP_MD_CTX* ctx;
};

}  // namespace

std::array<unsigned char, 32> sha256(std::span<const unsigned char> bytes) {
  DigestCtx d;
  d.update(bytes.data(), bytes.size());
  return d.digest();
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  DigestCtx d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string parameter_checksum(const ParameterStore& store) {
  DigestCtx d;
  for (const auto* p : store.all()) {
    d.update(p->name.data(), p->name.size());
    const unsigned char frozen = p->frozen ? 1 : 0;
    d.update(&frozen, 1);
    for (auto dim : p->tensor.shape()) {
      const std::uint64_t v = dim;
      d.update(&v, sizeof v);
    }
    auto vals = p->tensor.values();
    d.update(vals.data(), vals.size_bytes());
  }
  return d.hex();
}

}  // namespace fusecap
