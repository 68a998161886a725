#include "manifest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>

#include <openssl/evp.h>

#include "dosepred/case_io.hpp"
#include "dosepred/error.hpp"

namespace fs = std::filesystem;

namespace dosepred::cli {

std::string sha256_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail_io("cannot open " + file.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    fail_io("sha256: cannot initialise digest");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["tool"] = "dosepred";
  j["version"] = DOSEPRED_VERSION;
  j["subcommand"] = subcommand;
  j["seed"] = seed;
  j["config"] = config;
  auto in = nlohmann::ordered_json::object();
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name != "manifest.json" && name != ".lock" && name != "FAILED")
          files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) in[f.string()] = sha256_file(f);
    } else if (fs::is_regular_file(p)) {
      in[p.string()] = sha256_file(p);
    }
  }
  j["inputs"] = in;
  auto out = nlohmann::ordered_json::array();
  for (const auto& p : outputs) out.push_back(p.string());
  j["outputs"] = out;
  return j;
}

void RunManifest::write(const fs::path& dir) const { write_json(dir / "manifest.json", to_json()); }

OutputGuard::OutputGuard(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) fail_io("cannot create " + dir_.string() + ": " + ec.message());
  const fs::path lock = dir_ / ".lock";
  const int fd = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    fail_io("output directory " + dir_.string() + " is locked by another run (remove " +
            lock.string() + " if stale)");
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(fd, pid.data(), pid.size()) < 0) {
    ::close(fd);
    fail_io("cannot write " + lock.string());
  }
  ::close(fd);
  fs::remove(dir_ / "FAILED", ec);
}

OutputGuard::~OutputGuard() {
  if (!done_) fail("interrupted");
}

void OutputGuard::commit() {
  std::error_code ec;
  fs::remove(dir_ / ".lock", ec);
  done_ = true;
}

void OutputGuard::fail(const std::string& message) {
  if (done_) return;
  std::ofstream(dir_ / "FAILED") << message << '\n';
  std::error_code ec;
  fs::remove(dir_ / ".lock", ec);
  done_ = true;
}

}  // namespace dosepred::cli
