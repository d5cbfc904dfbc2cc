#include "maskclip/archive.hpp"

#include <bit>
#include <fstream>

#include <nlohmann/json.hpp>

#include "maskclip/errors.hpp"

namespace maskclip::archive {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "F32";
    case torch::kFloat64: return "F64";
    case torch::kInt64: return "I64";
    case torch::kUInt8: return "U8";
    default: throw CheckpointError(std::string("unsupported dtype for archive: ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "F32") return torch::kFloat32;
  if (s == "F64") return torch::kFloat64;
  if (s == "I64") return torch::kInt64;
  if (s == "U8") return torch::kUInt8;
  throw CheckpointError("unsupported dtype in archive: " + s);
}

}  // namespace

void save(const fs::path& path, const Archive& a) {
  json header = json::object();
  std::vector<torch::Tensor> payloads;
  std::uint64_t offset = 0;
  for (const auto& [key, t] : a.tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    const std::uint64_t bytes = static_cast<std::uint64_t>(c.numel()) * c.element_size();
    header[key] = {{"dtype", dtype_name(c.scalar_type())}, {"shape", c.sizes().vec()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
    payloads.push_back(c);
  }
  if (!a.metadata.empty()) header["__metadata__"] = a.metadata;

  std::string text = header.dump();
  // Pad the header with spaces so the payload starts 8-byte aligned.
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');
  const std::uint64_t n = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write archive: " + path.string());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& c : payloads)
    out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
  if (!out) throw IoError("short write on archive: " + path.string());
}

Archive load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open archive: " + path.string());
  const auto file_size = static_cast<std::uint64_t>(fs::file_size(path));

  std::uint64_t n = 0;
  if (file_size < sizeof n || !in.read(reinterpret_cast<char*>(&n), sizeof n))
    throw CheckpointError("archive truncated before header length: " + path.string());
  if (n > file_size - sizeof n) throw CheckpointError("archive truncated inside header: " + path.string());

  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("archive header is not valid JSON: ") + e.what());
  }

  const std::uint64_t payload_size = file_size - sizeof n - n;
  std::vector<char> payload(payload_size);
  in.read(payload.data(), static_cast<std::streamsize>(payload_size));

  Archive a;
  try {
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it.value().begin(); m != it.value().end(); ++m) a.metadata[m.key()] = m.value().get<std::string>();
      continue;
    }
    const auto& rec = it.value();
    const auto dtype = dtype_from(rec.at("dtype").get<std::string>());
    const auto shape = rec.at("shape").get<std::vector<std::int64_t>>();
    const auto begin = rec.at("data_offsets").at(0).get<std::uint64_t>();
    const auto end = rec.at("data_offsets").at(1).get<std::uint64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    const std::uint64_t expected = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    if (end < begin || end - begin != expected) throw CheckpointError("archive entry has inconsistent size: " + it.key());
    if (end > payload_size) throw CheckpointError("archive truncated: payload of " + it.key() + " runs past end of file");
    std::memcpy(t.data_ptr(), payload.data() + begin, expected);
    a.tensors.emplace(it.key(), std::move(t));
  }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed archive header entry: ") + e.what());
  }
  return a;
}

}  // namespace maskclip::archive
