#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <ostream>

#include <curl/curl.h>

#include "codeinv/cli.hpp"

namespace codeinv::cli {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

struct CurlCleanup {
  void operator()(CURL* c) const { curl_easy_cleanup(c); }
};

std::size_t write_chunk(char* data, std::size_t size, std::size_t count, void* file) {
  return std::fwrite(data, size, count, static_cast<std::FILE*>(file)) * size;
}

std::string lowercase(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::string file_name_for(const FetchRequest& request) {
  if (!request.sha256.empty()) return "vgg19-" + lowercase(request.sha256).substr(0, 16) + ".bin";
  std::string tail = request.url.substr(request.url.find_last_of('/') + 1);
  tail = tail.substr(0, tail.find_first_of("?#"));
  return tail.empty() ? "vgg19.bin" : tail;
}

void download(const std::string& url, const std::filesystem::path& to) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(to.string().c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write '" + to.string() + "'");
  std::unique_ptr<CURL, CurlCleanup> curl(curl_easy_init());
  if (!curl) throw std::runtime_error("libcurl initialisation failed");
  char error[CURL_ERROR_SIZE] = {};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_chunk);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, file.get());
  curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, error);
  const CURLcode rc = curl_easy_perform(curl.get());
  file.reset();
  if (rc != CURLE_OK)
    throw std::runtime_error("download of '" + url + "' failed: " + (*error ? error : curl_easy_strerror(rc)));
}

}  // namespace

std::filesystem::path default_cache_dir() {
  if (const char* dir = std::getenv("CODEINV_CACHE"); dir && *dir) return dir;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) return std::filesystem::path(xdg) / "codeinv";
  if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / ".cache" / "codeinv";
  return std::filesystem::temp_directory_path() / "codeinv";
}

std::filesystem::path fetch_weights(const FetchRequest& request, std::ostream& log) {
  if (request.url.empty()) throw UsageError("fetch-weights needs --url");
  const std::string expected = lowercase(request.sha256);
  if (!expected.empty() && (expected.size() != 64 || expected.find_first_not_of("0123456789abcdef") != std::string::npos))
    throw UsageError("--sha256 must be 64 hex digits");

  std::filesystem::create_directories(request.cache_dir);
  const std::filesystem::path target = request.cache_dir / file_name_for(request);

  if (!expected.empty() && std::filesystem::exists(target) && sha256_file(target) == expected) {
    log << "cached: " << target.string() << '\n';
  } else {
    const std::filesystem::path partial = target.string() + ".part";
    log << "downloading " << request.url << '\n';
    try {
      download(request.url, partial);
      const std::string digest = sha256_file(partial);
      if (!expected.empty() && digest != expected)
        throw std::runtime_error("checksum mismatch for '" + request.url + "': expected " + expected + ", got " + digest);
      load_backbone(partial);  // refuse to cache anything that is not a VGG-19 trunk
      log << "sha256 " << digest << '\n';
    } catch (...) {
      std::error_code ignored;
      std::filesystem::remove(partial, ignored);
      throw;
    }
    std::filesystem::rename(partial, target);
  }

  if (request.output) {
    if (request.output->has_parent_path()) std::filesystem::create_directories(request.output->parent_path());
    std::filesystem::copy_file(target, *request.output, std::filesystem::copy_options::overwrite_existing);
    log << "wrote " << request.output->string() << '\n';
    return *request.output;
  }
  return target;
}

}  // namespace codeinv::cli
