#pragma once

// Binary and JSON file formats.
//
//   CFMT  "CFMT", u32 C, u32 H, u32 W, then C*H*W f32; little-endian,
//         channel-major then row-major.
//   PGM   binary P5, maxval 255; 255 = set, 0 = unset, nothing else allowed.
//   CFML  "CFML", u32 W, u32 H, then H*W u16 category indices; little-endian.
//   Proposal index  JSON array of {"id", "mask" (path relative to the index),
//                   "box": [x0, y0, x1, y1]}.

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <initializer_list>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cfm/core_types.hpp"
#include "json.hpp"

namespace cfm {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void check_magic(std::span<const std::uint8_t> data, std::string_view magic,
                        const char* what) {
  if (data.size() < magic.size() ||
      std::memcmp(data.data(), magic.data(), magic.size()) != 0) {
    throw FormatError(std::string(what) + ": bad magic");
  }
}

// Product of dims as a byte count, or FormatError if it cannot be represented.
inline std::size_t payload_bytes(std::initializer_list<std::uint32_t> dims, std::size_t elem,
                                 const char* what) {
  std::uint64_t n = elem;
  for (auto d : dims) {
    if (d == 0) throw FormatError(std::string(what) + ": zero dimension in header");
    if (n > (std::uint64_t{1} << 40) / d) {
      throw FormatError(std::string(what) + ": dimension overflow");
    }
    n *= d;
  }
  if (n > std::numeric_limits<std::size_t>::max()) {
    throw FormatError(std::string(what) + ": dimension overflow");
  }
  return static_cast<std::size_t>(n);
}

inline constexpr std::uint32_t kMaxDim = static_cast<std::uint32_t>(std::numeric_limits<int>::max());

}  // namespace detail

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

// ---- CFMT ----------------------------------------------------------------

inline Bytes encode_feature_map(const FeatureMap& f) {
  Bytes out{'C', 'F', 'M', 'T'};
  out.reserve(16 + f.values().size() * 4);
  detail::put_u32(out, static_cast<std::uint32_t>(f.channels()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.width()));
  for (float v : f.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline FeatureMap decode_feature_map(std::span<const std::uint8_t> data) {
  detail::check_magic(data, "CFMT", "CFMT");
  if (data.size() < 16) throw FormatError("CFMT: truncated header");
  const auto c = detail::get_u32(data.data() + 4);
  const auto h = detail::get_u32(data.data() + 8);
  const auto w = detail::get_u32(data.data() + 12);
  const std::size_t n = detail::payload_bytes({c, h, w}, 4, "CFMT");
  if (c > detail::kMaxDim || h > detail::kMaxDim || w > detail::kMaxDim) {
    throw FormatError("CFMT: dimension overflow");
  }
  if (data.size() - 16 < n) throw FormatError("CFMT: truncated payload");
  if (data.size() - 16 > n) throw FormatError("CFMT: trailing bytes after payload");
  std::vector<float> values(n / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(detail::get_u32(data.data() + 16 + 4 * i));
  }
  try {
    return FeatureMap(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w),
                      std::move(values));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("CFMT: ") + e.what());
  }
}

inline void save_feature_map(const std::filesystem::path& path, const FeatureMap& f) {
  write_file(path, encode_feature_map(f));
}
inline FeatureMap load_feature_map(const std::filesystem::path& path) {
  return decode_feature_map(read_file(path));
}

// ---- PGM -----------------------------------------------------------------

inline Bytes encode_pgm(int width, int height, std::span<const std::uint8_t> bits) {
  const std::string header =
      "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + bits.size());
  for (auto b : bits) out.push_back(b ? 255 : 0);
  return out;
}

inline Bytes encode_mask(const BinaryMask& m) { return encode_pgm(m.width(), m.height(), m.bits()); }

namespace detail {

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string pgm_token(std::span<const std::uint8_t> data, std::size_t& pos) {
  for (;;) {
    while (pos < data.size() && std::isspace(data[pos])) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < data.size() && !std::isspace(data[pos]) && data[pos] != '#') {
    tok.push_back(static_cast<char>(data[pos++]));
  }
  if (tok.empty()) throw FormatError("PGM: truncated header");
  return tok;
}

inline std::uint32_t pgm_number(const std::string& tok) {
  if (tok.size() > 10 || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("PGM: bad header number '" + tok + "'");
  }
  const auto v = std::stoull(tok);
  if (v > kMaxDim) throw FormatError("PGM: dimension overflow");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline BinaryMask decode_mask(std::span<const std::uint8_t> data) {
  detail::check_magic(data, "P5", "PGM");
  std::size_t pos = 2;
  if (pos >= data.size() || !std::isspace(data[pos])) throw FormatError("PGM: bad magic");
  const auto w = detail::pgm_number(detail::pgm_token(data, pos));
  const auto h = detail::pgm_number(detail::pgm_token(data, pos));
  const auto maxval = detail::pgm_number(detail::pgm_token(data, pos));
  if (maxval != 255) throw FormatError("PGM: maxval must be 255");
  if (pos >= data.size() || !std::isspace(data[pos])) throw FormatError("PGM: truncated header");
  ++pos;  // single whitespace before raster
  const std::size_t n = detail::payload_bytes({w, h}, 1, "PGM");
  if (data.size() - pos < n) throw FormatError("PGM: truncated payload");
  if (data.size() - pos > n) throw FormatError("PGM: trailing bytes after payload");
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = data[pos + i];
    if (v != 0 && v != 255) {
      throw FormatError("PGM: pixel value " + std::to_string(v) + " is neither 0 nor 255");
    }
    bits[i] = v == 255;
  }
  return BinaryMask(static_cast<int>(w), static_cast<int>(h), std::move(bits));
}

inline void save_mask(const std::filesystem::path& path, const BinaryMask& m) {
  write_file(path, encode_mask(m));
}
inline BinaryMask load_mask(const std::filesystem::path& path) { return decode_mask(read_file(path)); }

// ---- CFML ----------------------------------------------------------------

inline Bytes encode_label_map(const LabelMap& m) {
  Bytes out{'C', 'F', 'M', 'L'};
  out.reserve(12 + m.labels().size() * 2);
  detail::put_u32(out, static_cast<std::uint32_t>(m.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.height()));
  for (auto l : m.labels()) detail::put_u16(out, l);
  return out;
}

inline LabelMap decode_label_map(std::span<const std::uint8_t> data) {
  detail::check_magic(data, "CFML", "CFML");
  if (data.size() < 12) throw FormatError("CFML: truncated header");
  const auto w = detail::get_u32(data.data() + 4);
  const auto h = detail::get_u32(data.data() + 8);
  const std::size_t n = detail::payload_bytes({w, h}, 2, "CFML");
  if (w > detail::kMaxDim || h > detail::kMaxDim) throw FormatError("CFML: dimension overflow");
  if (data.size() - 12 < n) throw FormatError("CFML: truncated payload");
  if (data.size() - 12 > n) throw FormatError("CFML: trailing bytes after payload");
  std::vector<std::uint16_t> labels(n / 2);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = detail::get_u16(data.data() + 12 + 2 * i);
  return LabelMap(static_cast<int>(w), static_cast<int>(h), std::move(labels));
}

inline void save_label_map(const std::filesystem::path& path, const LabelMap& m) {
  write_file(path, encode_label_map(m));
}
inline LabelMap load_label_map(const std::filesystem::path& path) {
  return decode_label_map(read_file(path));
}

// ---- Proposal index ------------------------------------------------------

struct ProposalIndexEntry {
  std::string id;
  std::string mask;  // relative to the index file's directory
  PixelBox box;

  friend bool operator==(const ProposalIndexEntry&, const ProposalIndexEntry&) = default;
};

inline std::string encode_proposal_index(const std::vector<ProposalIndexEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"id", e.id},
                   {"mask", e.mask},
                   {"box", {e.box.x0, e.box.y0, e.box.x1, e.box.y1}}});
  }
  return arr.dump(1) + "\n";
}

inline std::vector<ProposalIndexEntry> decode_proposal_index(std::string_view text) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("proposal index: ") + e.what());
  }
  if (!arr.is_array()) throw FormatError("proposal index: top level must be an array");
  std::vector<ProposalIndexEntry> out;
  out.reserve(arr.size());
  for (const auto& item : arr) {
    if (!item.is_object() || !item.contains("id") || !item.contains("mask") ||
        !item.contains("box")) {
      throw FormatError("proposal index: entry needs id, mask and box");
    }
    const auto& box = item.at("box");
    if (!item.at("id").is_string() || !item.at("mask").is_string() || !box.is_array() ||
        box.size() != 4) {
      throw FormatError("proposal index: malformed entry");
    }
    for (const auto& v : box) {
      if (!v.is_number_integer()) throw FormatError("proposal index: box must hold integers");
    }
    ProposalIndexEntry e{item.at("id").get<std::string>(), item.at("mask").get<std::string>(),
                         {box[0].get<int>(), box[1].get<int>(), box[2].get<int>(), box[3].get<int>()}};
    if (!e.box.valid()) throw FormatError("proposal index: invalid box for '" + e.id + "'");
    out.push_back(std::move(e));
  }
  return out;
}

// Loads every mask of an index; each stored box must equal the mask's tight box.
inline std::vector<SegmentProposal> load_proposals(const std::filesystem::path& index_path) {
  const auto bytes = read_file(index_path);
  const auto entries = decode_proposal_index(std::string_view(
      reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  const auto dir = index_path.parent_path();
  std::vector<SegmentProposal> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    SegmentProposal p(e.id, load_mask(dir / e.mask));
    if (!(p.box() == e.box)) {
      throw FormatError("proposal index: box of '" + e.id + "' is not the mask's tight box");
    }
    out.push_back(std::move(p));
  }
  return out;
}

// Writes masks as <mask_dir>/<id>.pgm next to the index.
inline void save_proposals(const std::filesystem::path& index_path,
                           const std::vector<SegmentProposal>& proposals,
                           const std::string& mask_dir = "masks") {
  const auto dir = index_path.parent_path();
  std::filesystem::create_directories(dir / mask_dir);
  std::vector<ProposalIndexEntry> entries;
  entries.reserve(proposals.size());
  for (const auto& p : proposals) {
    const std::string rel = mask_dir + "/" + p.id() + ".pgm";
    save_mask(dir / rel, p.mask());
    entries.push_back({p.id(), rel, p.box()});
  }
  const auto text = encode_proposal_index(entries);
  write_file(index_path, std::span<const std::uint8_t>(
                             reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                 text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace cfm
