#include "maskclip/digest.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <memory>
#include <vector>

#include <openssl/evp.h>

#include "maskclip/errors.hpp"

namespace maskclip::digest {

namespace fs = std::filesystem;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("EVP sha256 init failed");
  }
  void update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(ctx_.get(), data, size) != 1) throw Error("EVP sha256 update failed");
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw Error("EVP sha256 final failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256(const void* data, std::size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex();
}

std::string tensors_sha256(const std::map<std::string, torch::Tensor>& tensors) {
  Sha256 h;
  for (const auto& [name, t] : tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    h.update(name);
    h.update(std::string(c10::toString(c.scalar_type())));
    for (auto s : c.sizes()) h.update(&s, sizeof s);
    h.update(c.data_ptr(), static_cast<std::size_t>(c.numel()) * c.element_size());
  }
  return h.hex();
}

std::string directory_sha256(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& rel : files) {
    h.update(rel.generic_string());
    std::ifstream in(dir / rel, std::ios::binary);
    if (!in) throw IoError("cannot read " + (dir / rel).string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h.update(bytes.data(), bytes.size());
  }
  return h.hex();
}

}  // namespace maskclip::digest
