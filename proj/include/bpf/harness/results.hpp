#pragma once

// Result collection: CSV tables, check outcomes, and a JSON manifest listing
// every emitted file with its SHA-256.

#include <openssl/evp.h>

#include <concepts>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpf/errors.hpp"

namespace bpf::harness {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// For names and messages.
inline std::string format_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Cell {
  std::string text;
  Cell(double v) : text(format_double(v)) {}  // NOLINT
  template <std::integral T>
  Cell(T v) : text(std::to_string(v)) {}  // NOLINT
  Cell(std::string s) : text(std::move(s)) {}  // NOLINT
  Cell(const char* s) : text(s) {}  // NOLINT
};

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : columns_(header.size()) {
    append(header);
  }

  void add(const std::vector<Cell>& cells) {
    if (cells.size() != columns_) throw IoError("csv: row width differs from header");
    std::vector<std::string> t;
    t.reserve(cells.size());
    for (const auto& c : cells) t.push_back(c.text);
    append(t);
  }

  std::size_t rows() const noexcept { return rows_; }
  const std::string& text() const noexcept { return text_; }

 private:
  void append(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
    ++rows_;
  }

  std::size_t columns_;
  std::size_t rows_ = 0;
  std::string text_;
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha256: digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

enum class CheckStatus { pass, fail, skipped };

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "PASS";
    case CheckStatus::fail: return "FAIL";
    default: return "SKIPPED";
  }
}

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::skipped;
  double value = 0.0;
  std::string criterion;  // human-readable pass condition
  std::string detail;
};

inline CheckResult make_check(std::string name, bool ok, double value, std::string criterion, std::string detail = {}) {
  return {std::move(name), ok ? CheckStatus::pass : CheckStatus::fail, value, std::move(criterion), std::move(detail)};
}

class ResultSet {
 public:
  ResultSet(std::string scenario, std::string command, std::uint64_t seed, std::string config_echo)
      : scenario_(std::move(scenario)), command_(std::move(command)), seed_(seed), config_(std::move(config_echo)) {}

  void add_table(const std::string& name, const CsvTable& t) { files_.push_back({file_name(name), t.text()}); }
  void add_check(CheckResult c) { checks_.push_back(std::move(c)); }
  const std::vector<CheckResult>& checks() const noexcept { return checks_; }

  bool any_failed() const {
    for (const auto& c : checks_)
      if (c.status == CheckStatus::fail) return true;
    return false;
  }

  std::string file_name(const std::string& name) const { return scenario_ + "_" + command_ + "_" + name + ".csv"; }
  std::string manifest_name() const { return scenario_ + "_" + command_ + "_manifest.json"; }

  std::string manifest() const {
    nlohmann::ordered_json m;
    m["scenario"] = scenario_;
    m["command"] = command_;
    m["seed"] = seed_;
    m["config"] = config_;
    m["files"] = nlohmann::ordered_json::array();
    for (const auto& [name, content] : files_)
      m["files"].push_back({{"name", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
    m["checks"] = nlohmann::ordered_json::array();
    for (const auto& c : checks_)
      m["checks"].push_back({{"name", c.name},
                             {"status", to_string(c.status)},
                             {"value", c.value},
                             {"criterion", c.criterion},
                             {"detail", c.detail}});
    return m.dump(2) + "\n";
  }

  // Writes every table and the manifest; returns the manifest path.
  std::filesystem::path write(const std::filesystem::path& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    for (const auto& [name, content] : files_) write_file(dir / name, content);
    const auto path = dir / manifest_name();
    write_file(path, manifest());
    return path;
  }

 private:
  static void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + p.string());
  }

  std::string scenario_;
  std::string command_;
  std::uint64_t seed_;
  std::string config_;
  std::vector<std::pair<std::string, std::string>> files_;
  std::vector<CheckResult> checks_;
};

}  // namespace bpf::harness
