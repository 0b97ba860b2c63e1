#include "knowpilot/util.hpp"

#include <array>
#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace knowpilot {

std::uint64_t fnv1a64(std::string_view data) noexcept {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

namespace {

constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int base64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(kBase64Alphabet[(n >> 18) & 63]);
        out.push_back(kBase64Alphabet[(n >> 12) & 63]);
        out.push_back(kBase64Alphabet[(n >> 6) & 63]);
        out.push_back(kBase64Alphabet[n & 63]);
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t n = bytes[i] << 16;
        out.push_back(kBase64Alphabet[(n >> 18) & 63]);
        out.push_back(kBase64Alphabet[(n >> 12) & 63]);
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(kBase64Alphabet[(n >> 18) & 63]);
        out.push_back(kBase64Alphabet[(n >> 12) & 63]);
        out.push_back(kBase64Alphabet[(n >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw std::invalid_argument("base64 length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int v[4];
        int padding = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = text[i + static_cast<std::size_t>(j)];
            if (c == '=' && i + 4 == text.size() && j >= 2) {
                v[j] = 0;
                ++padding;
                continue;
            }
            if (padding > 0) throw std::invalid_argument("base64 data after padding");
            v[j] = base64_value(c);
            if (v[j] < 0) throw std::invalid_argument("invalid base64 character");
        }
        const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(static_cast<std::uint8_t>((n >> 16) & 0xFF));
        if (padding < 2) out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xFF));
        if (padding < 1) out.push_back(static_cast<std::uint8_t>(n & 0xFF));
    }
    return out;
}

std::string encode_embedding(std::span<const float> values) {
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        bytes[i * 4 + 0] = static_cast<std::uint8_t>(bits & 0xFF);
        bytes[i * 4 + 1] = static_cast<std::uint8_t>((bits >> 8) & 0xFF);
        bytes[i * 4 + 2] = static_cast<std::uint8_t>((bits >> 16) & 0xFF);
        bytes[i * 4 + 3] = static_cast<std::uint8_t>((bits >> 24) & 0xFF);
    }
    return base64_encode(bytes);
}

std::vector<float> decode_embedding(std::string_view base64) {
    const auto bytes = base64_decode(base64);
    if (bytes.size() % 4 != 0) throw std::invalid_argument("embedding byte length not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(bytes[i * 4]) |
                                   (static_cast<std::uint32_t>(bytes[i * 4 + 1]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[i * 4 + 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[i * 4 + 3]) << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) words.emplace_back(text.substr(start, i - start));
    }
    return words;
}

std::string normalize_whitespace(std::string_view text) {
    const auto words = split_words(text);
    return join(words, " ");
}

std::string join(std::span<const std::string> parts, std::string_view separator) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += separator;
        out += parts[i];
    }
    return out;
}

std::string trim(std::string_view text) {
    std::size_t begin = 0;
    std::size_t end = text.size();
    while (begin < end && is_space(text[begin])) ++begin;
    while (end > begin && is_space(text[end - 1])) --end;
    return std::string(text.substr(begin, end - begin));
}

std::string to_lower_ascii(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    std::vector<Json> out;
    std::ifstream in(path, std::ios::binary);
    if (!in) return out;
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string contents = buffer.str();
    std::size_t start = 0;
    std::size_t line_number = 0;
    while (start < contents.size()) {
        const std::size_t newline = contents.find('\n', start);
        if (newline == std::string::npos) break;  // torn trailing write
        ++line_number;
        const std::string_view line(contents.data() + start, newline - start);
        start = newline + 1;
        if (trim(line).empty()) continue;
        try {
            out.push_back(Json::parse(line));
        } catch (const Json::parse_error& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_number) +
                                     ": malformed record: " + e.what());
        }
    }
    return out;
}

void append_jsonl_lines(const std::filesystem::path& path, std::span<const Json> lines) {
    std::string payload;
    for (const auto& line : lines) {
        payload += line.dump();
        payload += '\n';
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open for append: " + path.string());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void append_jsonl(const std::filesystem::path& path, const Json& line) {
    append_jsonl_lines(path, std::span<const Json>(&line, 1));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write: " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

TimestampMs SystemClock::now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

TimestampMs LogicalClock::now_ms() {
    std::lock_guard lock(mutex_);
    const TimestampMs value = now_;
    now_ += step_;
    return value;
}

void LogicalClock::advance(TimestampMs delta_ms) {
    std::lock_guard lock(mutex_);
    now_ += delta_ms;
}

void LogicalClock::set(TimestampMs value) {
    std::lock_guard lock(mutex_);
    now_ = value;
}

IdGenerator::IdGenerator() {
    std::random_device device;
    std::seed_seq seq{device(), device(), device(), device()};
    engine_.seed(seq);
}

IdGenerator::IdGenerator(std::uint64_t seed) : engine_(seed) {}

std::string IdGenerator::next() {
    std::lock_guard lock(mutex_);
    const std::uint64_t hi = engine_();
    const std::uint64_t lo = engine_();
    return hex64(hi) + hex64(lo);
}

Runtime Runtime::system() {
    return Runtime{std::make_shared<SystemClock>(), std::make_shared<IdGenerator>()};
}

Runtime Runtime::deterministic(std::uint64_t seed, TimestampMs start, TimestampMs step_ms) {
    return Runtime{std::make_shared<LogicalClock>(start, step_ms), std::make_shared<IdGenerator>(seed)};
}

}  // namespace knowpilot
