#include "omniair/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace omniair {

namespace {

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

void write_bundle(const std::filesystem::path& dir, const ModelParams& tensors,
                  const nlohmann::json& meta, const std::string& bin_name) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = meta.is_object() ? meta : nlohmann::json::object();
  manifest["data_file"] = bin_name;
  nlohmann::json entries = nlohmann::json::array();
  std::ofstream bin(dir / bin_name, std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + (dir / bin_name).string());
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape}, {"dtype", "f64"}, {"offset", offset}});
    for (double v : t.data) put_le(bin, v);
    offset += t.data.size() * 8;
  }
  manifest["tensors"] = std::move(entries);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Bundle read_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest.json in " + dir.string());
  Bundle b;
  try {
    in >> b.manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest.json: " + std::string(e.what()));
  }
  const std::string bin_name = b.manifest.value("data_file", std::string("params.bin"));
  std::ifstream bin(dir / bin_name, std::ios::binary);
  if (!bin) throw std::runtime_error("missing " + bin_name + " in " + dir.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                   std::istreambuf_iterator<char>());
  for (const auto& e : b.manifest.at("tensors")) {
    if (e.at("dtype") != "f64") throw std::runtime_error("unsupported dtype in manifest");
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t n = numel(shape);
    if (offset + n * 8 > bytes.size())
      throw std::runtime_error("tensor '" + e.at("name").get<std::string>() + "' exceeds " + bin_name);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_le(bytes.data() + offset + i * 8);
    b.tensors.add(e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
  }
  return b;
}

}  // namespace omniair
