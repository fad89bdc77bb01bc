#pragma once

// Checkpoint archives:
//   "WFCK" | u32 version (1) | u32 header length | header text
//   | u32 entry count | entries of (u32 name length | name bytes | WFDT tensor)
// The header is free text; the CLI stores a JSON document there.

#include <map>

#include "wfdiff/nn.hpp"
#include "wfdiff/wfdt.hpp"

namespace wfdiff {

inline constexpr char kCheckpointMagic[4] = {'W', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T = float>
struct Checkpoint {
    std::string header;
    NamedParams<T> entries;

    std::map<std::string, Tensor<T>> as_map() const {
        std::map<std::string, Tensor<T>> out;
        for (const auto& [name, t] : entries) out.emplace(name, t);
        return out;
    }

    /// Entries whose name starts with `prefix`, with the prefix removed.
    std::map<std::string, Tensor<T>> with_prefix(const std::string& prefix) const {
        std::map<std::string, Tensor<T>> out;
        for (const auto& [name, t] : entries)
            if (name.starts_with(prefix)) out.emplace(name.substr(prefix.size()), t);
        return out;
    }

    void add(const std::string& prefix, const NamedParams<T>& params) {
        for (const auto& [name, t] : params) entries.emplace_back(prefix + name, t);
    }
};

template <class T>
void write_checkpoint(std::ostream& os, const Checkpoint<T>& ck) {
    os.write(kCheckpointMagic, 4);
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.header.size()));
    os.write(ck.header.data(), static_cast<std::streamsize>(ck.header.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& [name, t] : ck.entries) {
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_wfdt(os, t);
    }
    if (!os) throw FormatError("checkpoint: write failed");
}

template <class T = float>
Checkpoint<T> read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
    const auto version = detail::get_le<std::uint32_t>(is, "checkpoint version");
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    auto read_string = [&is](std::uint32_t n, const char* what) {
        if (n > (1u << 24)) throw FormatError(std::string("checkpoint: implausible ") + what + " length");
        std::string s(n, '\0');
        if (!is.read(s.data(), n)) throw FormatError(std::string("checkpoint: truncated ") + what);
        return s;
    };
    Checkpoint<T> ck;
    ck.header = read_string(detail::get_le<std::uint32_t>(is, "header length"), "header");
    const auto count = detail::get_le<std::uint32_t>(is, "entry count");
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = read_string(detail::get_le<std::uint32_t>(is, "name length"), "name");
        ck.entries.emplace_back(std::move(name), read_wfdt<T>(is));
    }
    return ck;
}

template <class T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_checkpoint(os, ck);
}

template <class T = float>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read_checkpoint<T>(is);
}

template <class T>
std::string checkpoint_bytes(const Checkpoint<T>& ck) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, ck);
    return os.str();
}

}  // namespace wfdiff
