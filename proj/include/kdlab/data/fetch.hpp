// Copyright 2026 The kdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Requires linking libcurl, libcrypto and zlib (the kdlab_fetch target).

#include <curl/curl.h>
#include <openssl/evp.h>
#include <zlib.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "kdlab/data/datasets.hpp"

namespace kdlab::data {

struct ArchiveSpec {
  std::string name;
  std::string url;
  std::string filename;
  std::string md5;
};

inline const ArchiveSpec kCifarArchive{"cifar10", "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
                                       "cifar-10-binary.tar.gz", "c32a1d4ab5d03f1284b67883e8d87530"};
inline const ArchiveSpec kStlArchive{"stl10", "http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz",
                                     "stl10_binary.tar.gz", "91f7769df0f17e558f3565bffb0c7dfb"};

inline std::string md5_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw StorageError("cannot read " + file.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_md5(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 15];
  }
  return hex;
}

/// Downloads `url` to `dest` via a temporary `.part` file.
inline void download(const std::string& url, const fs::path& dest) {
  fs::create_directories(dest.parent_path());
  const fs::path part = dest.string() + ".part";
  std::FILE* out = std::fopen(part.c_str(), "wb");
  if (!out) throw StorageError("cannot write " + part.string());
  CURL* curl = curl_easy_init();
  if (!curl) {
    std::fclose(out);
    throw EnvironmentError("libcurl initialisation failed");
  }
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 30L);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, out);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  std::fclose(out);
  if (rc != CURLE_OK) {
    fs::remove(part);
    throw EnvironmentError("download of " + url + " failed: " + curl_easy_strerror(rc));
  }
  fs::rename(part, dest);
}

/// Extracts the regular files and directories of a gzip-compressed ustar
/// archive below `dest`. Entries that would escape `dest` are rejected.
inline std::size_t extract_tar_gz(const fs::path& archive, const fs::path& dest) {
  gzFile gz = gzopen(archive.c_str(), "rb");
  if (!gz) throw StorageError("cannot open " + archive.string());
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(gz, gzclose);
  auto read_exact = [&](char* p, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const int r = gzread(gz, p + got, static_cast<unsigned>(std::min<std::size_t>(n - got, 1u << 30)));
      if (r <= 0) return false;
      got += static_cast<std::size_t>(r);
    }
    return true;
  };
  std::array<char, 512> header{};
  std::vector<char> buf(1 << 20);
  std::size_t files = 0;
  std::string long_name;
  while (read_exact(header.data(), header.size())) {
    if (header[0] == '\0') break;
    std::string name(header.data(), strnlen(header.data(), 100));
    const std::string prefix(header.data() + 345, strnlen(header.data() + 345, 155));
    if (!prefix.empty()) name = prefix + "/" + name;
    if (!long_name.empty()) name = std::exchange(long_name, {});
    const std::size_t size = std::stoull(std::string(header.data() + 124, strnlen(header.data() + 124, 12)), nullptr, 8);
    const char type = header[156];
    const std::size_t padded = (size + 511) / 512 * 512;
    const fs::path rel = fs::path(name).lexically_normal();
    if (rel.is_absolute() || (!rel.empty() && *rel.begin() == ".."))
      throw StorageError("archive entry escapes the destination: " + name);
    if (type == 'L') {
      std::string ln(padded, '\0');
      if (!read_exact(ln.data(), padded)) throw StorageError("truncated archive " + archive.string());
      long_name.assign(ln.c_str());
      continue;
    }
    if (type == '5') {
      fs::create_directories(dest / rel);
      continue;
    }
    std::optional<std::ofstream> out;
    if (type == '0' || type == '\0') {
      fs::create_directories((dest / rel).parent_path());
      out.emplace(dest / rel, std::ios::binary);
      ++files;
    }
    for (std::size_t left = padded; left > 0;) {
      const std::size_t n = std::min(left, buf.size());
      if (!read_exact(buf.data(), n)) throw StorageError("truncated archive " + archive.string());
      const std::size_t payload_done = padded - left;
      if (out && payload_done < size)
        out->write(buf.data(), static_cast<std::streamsize>(std::min(n, size - payload_done)));
      left -= n;
    }
  }
  return files;
}

/// Verifies (and extracts) one archive. Uses `local_archive` when given,
/// otherwise downloads into `root`. A checksum mismatch is a storage error.
inline void fetch_archive(const ArchiveSpec& spec, const fs::path& root, const std::optional<fs::path>& local_archive) {
  fs::path archive = local_archive.value_or(root / spec.filename);
  if (!fs::exists(archive)) {
    if (local_archive) throw EnvironmentError("archive not found: " + archive.string());
    download(spec.url, archive);
  }
  const std::string got = md5_file(archive);
  if (got != spec.md5)
    throw StorageError(spec.name + " archive checksum mismatch: expected md5 " + spec.md5 + ", got " + got);
  extract_tar_gz(archive, root);
}

}  // namespace kdlab::data
