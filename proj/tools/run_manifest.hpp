#pragma once

// Per-run provenance record written next to every command's primary output.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "skigear/skigear.hpp"

namespace skigear::cli {

/// Lower-case hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

class RunManifest {
 public:
  RunManifest(std::string command, nlohmann::json flags, std::uint64_t seed)
      : command_(std::move(command)), flags_(std::move(flags)), seed_(seed), started_(detail::utc_now()) {}

  void input(const std::string& path) { inputs_.push_back(path); }
  void output(const std::string& path) { outputs_.push_back(path); }

  nlohmann::json to_json() const {
    auto digests = [](const std::vector<std::string>& paths) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& p : paths) arr.push_back({{"path", p}, {"sha256", sha256_file(p)}});
      return arr;
    };
    return {{"command", command_},
            {"flags", flags_},
            {"seed", seed_},
            {"toolkit_version", toolkit_version},
            {"inputs", digests(inputs_)},
            {"outputs", digests(outputs_)},
            {"started_at", started_},
            {"finished_at", detail::utc_now()}};
  }

  void write(const std::string& path) const { csv::write_file(path, to_json().dump(2) + "\n"); }

 private:
  std::string command_;
  nlohmann::json flags_;
  std::uint64_t seed_;
  std::string started_;
  std::vector<std::string> inputs_, outputs_;
};

}  // namespace skigear::cli
