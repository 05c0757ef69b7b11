#include "promptforge/util.hpp"

#include <unicode/unorm2.h>
#include <unicode/ustring.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "promptforge/errors.hpp"

namespace promptforge::util {

namespace {
constexpr uint64_t kFnvOffset = 14695981039346656037ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
}  // namespace

uint64_t fnv1a64(std::string_view data) {
    uint64_t h = kFnvOffset;
    for (unsigned char c : data) {
        h ^= static_cast<uint64_t>(c);
        h *= kFnvPrime;
    }
    return h;
}

std::string fnv1a64_hex(std::string_view data) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(data)));
    return std::string(buf);
}

uint64_t mix_seed(uint64_t parent, uint64_t salt) {
    uint64_t x = parent ^ (salt + 0x9e3779b97f4a7c15ull + (parent << 6) + (parent >> 2));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

double u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t pick_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % static_cast<uint64_t>(n));
}

std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_ws(s[b])) ++b;
    while (e > b && is_ws(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_ws(s[i])) ++i;
        std::size_t start = i;
        while (i < s.size() && !is_ws(s[i])) ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

std::size_t count_words(std::string_view s) {
    std::size_t n = 0, i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_ws(s[i])) ++i;
        std::size_t start = i;
        while (i < s.size() && !is_ws(s[i])) ++i;
        if (i > start) ++n;
    }
    return n;
}

std::string nfc(std::string_view s) {
    if (s.empty()) return std::string();
    UErrorCode ec = U_ZERO_ERROR;
    const UNormalizer2* n2 = unorm2_getNFCInstance(&ec);
    if (U_FAILURE(ec)) return std::string(s);

    std::vector<UChar> u16(s.size() + 1);
    int32_t u16len = 0;
    ec = U_ZERO_ERROR;
    u_strFromUTF8(u16.data(), static_cast<int32_t>(u16.size()), &u16len, s.data(),
                  static_cast<int32_t>(s.size()), &ec);
    if (U_FAILURE(ec)) return std::string(s);

    std::vector<UChar> norm(static_cast<std::size_t>(u16len) * 3 + 8);
    ec = U_ZERO_ERROR;
    int32_t normlen = unorm2_normalize(n2, u16.data(), u16len, norm.data(),
                                       static_cast<int32_t>(norm.size()), &ec);
    if (U_FAILURE(ec)) return std::string(s);

    std::string out(static_cast<std::size_t>(normlen) * 4 + 8, '\0');
    int32_t outlen = 0;
    ec = U_ZERO_ERROR;
    u_strToUTF8(out.data(), static_cast<int32_t>(out.size()), &outlen, norm.data(),
                normlen, &ec);
    if (U_FAILURE(ec)) return std::string(s);
    out.resize(static_cast<std::size_t>(outlen));
    return out;
}

std::string normalize_field(std::string_view s) { return trim(nfc(s)); }

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    if (from.empty()) return s;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write file: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ConfigError("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

HttpUrl parse_http_url(std::string_view url) {
    constexpr std::string_view scheme = "http://";
    if (url.substr(0, scheme.size()) != scheme)
        throw ConfigError("only http:// URLs are supported: " + std::string(url));
    std::string_view rest = url.substr(scheme.size());
    HttpUrl out;
    std::size_t slash = rest.find('/');
    std::string_view authority = slash == std::string_view::npos ? rest : rest.substr(0, slash);
    out.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    std::size_t colon = authority.find(':');
    if (colon == std::string_view::npos) {
        out.host = std::string(authority);
    } else {
        out.host = std::string(authority.substr(0, colon));
        out.port = std::atoi(std::string(authority.substr(colon + 1)).c_str());
        if (out.port <= 0) throw ConfigError("bad port in URL: " + std::string(url));
    }
    if (out.host.empty()) throw ConfigError("missing host in URL: " + std::string(url));
    return out;
}

}  // namespace promptforge::util
