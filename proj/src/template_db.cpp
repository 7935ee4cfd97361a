#include "foldnet/template_db.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "foldnet/error.hpp"

namespace foldnet::analyze {

namespace {
constexpr char kMagic[4] = {'D', 'S', 'F', 'T'};
constexpr std::uint32_t kMaxIdBytes = 1 << 16;
}  // namespace

TemplateDB::TemplateDB(std::vector<TemplateRecord> records) {
  records_.reserve(records.size());
  for (auto& r : records) add(std::move(r));
}

void TemplateDB::add(TemplateRecord record) {
  if (!records_.empty() && record.feature.size() != dimension_) {
    throw ValidationError("template '" + record.id + "' has " +
                          std::to_string(record.feature.size()) + " feature values, expected " +
                          std::to_string(dimension_));
  }
  if (records_.empty()) dimension_ = record.feature.size();
  records_.push_back(std::move(record));
}

TemplateDB build_template_db(const model::ModelState& state,
                             std::span<const encode::EncodedProtein> proteins) {
  for (const auto& p : proteins) {
    if (!p.label) throw ValidationError("template '" + p.id + "' has no fold label");
  }
  auto out = model::infer(state, proteins);
  TemplateDB db;
  for (std::size_t i = 0; i < proteins.size(); ++i) {
    db.add({proteins[i].id, *proteins[i].label, std::move(out.features[i].values)});
  }
  return db;
}

std::string serialize_template_db(const TemplateDB& db) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  io::write_le<std::uint32_t>(out, kTemplateDbVersion);
  io::write_le<std::uint64_t>(out, db.size());
  io::write_le<std::uint64_t>(out, db.dimension());
  for (const auto& r : db.records()) {
    if (r.id.size() > kMaxIdBytes) throw ValidationError("template id too long: " + r.id);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.id.size()));
    io::write_bytes(out, r.id);
  }
  for (const auto& r : db.records()) {
    if (r.fold > std::numeric_limits<std::uint32_t>::max()) {
      throw ValidationError("template '" + r.id + "' fold index out of range");
    }
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.fold));
  }
  for (const auto& r : db.records()) {
    for (double v : r.feature) io::write_f32(out, v);
  }
  return out.str();
}

TemplateDB deserialize_template_db(const std::string& bytes, const std::string& source) {
  std::istringstream in(bytes, std::ios::binary);
  io::Reader r(in, source);
  if (r.read_string(4, "magic") != std::string(kMagic, 4)) {
    throw FormatError(source + ": not a template database (bad magic)");
  }
  if (const auto v = r.read_le<std::uint32_t>("version"); v != kTemplateDbVersion) {
    throw FormatError(source + ": unsupported template database version " + std::to_string(v));
  }
  const auto count = r.read_le<std::uint64_t>("record count");
  const auto dim = r.read_le<std::uint64_t>("dimension");
  // Every record needs at least 4 + 4 + 4 * dim bytes; reject counts the payload cannot hold.
  if (count > bytes.size() / 8 || (count && dim > bytes.size() / 4 / count)) {
    throw FormatError(source + ": implausible record count or dimension");
  }
  std::vector<TemplateRecord> records(count);
  for (auto& rec : records) {
    const auto len = r.read_le<std::uint32_t>("id length");
    if (len > kMaxIdBytes) throw FormatError(source + ": implausible id length");
    rec.id = r.read_string(len, "id");
  }
  for (auto& rec : records) rec.fold = r.read_le<std::uint32_t>("fold index");
  for (auto& rec : records) {
    rec.feature.resize(dim);
    for (double& v : rec.feature) v = r.read_f32("features");
  }
  r.expect_end();
  return TemplateDB(std::move(records));
}

void save_template_db(const TemplateDB& db, const std::filesystem::path& path) {
  const std::string bytes = serialize_template_db(db);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write template database " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing template database " + path.string());
}

TemplateDB load_template_db(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open template database " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_template_db(ss.str(), path.string());
}

std::string template_db_tsv(const TemplateDB& db) {
  std::ostringstream out;
  out.precision(9);
  out << "id\tfold";
  for (std::size_t i = 0; i < db.dimension(); ++i) out << "\tf" << i;
  out << '\n';
  for (const auto& r : db.records()) {
    out << r.id << '\t' << r.fold;
    for (double v : r.feature) out << '\t' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace foldnet::analyze
