#pragma once

// A searchable set of fold-feature embeddings for proteins of known fold.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "foldnet/encode.hpp"
#include "foldnet/model.hpp"

namespace foldnet::analyze {

struct TemplateRecord {
  std::string id;
  std::size_t fold = 0;
  std::vector<double> feature;
};

class TemplateDB {
 public:
  TemplateDB() = default;
  explicit TemplateDB(std::vector<TemplateRecord> records);

  // Throws ValidationError when the feature width differs from earlier records.
  void add(TemplateRecord record);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::vector<TemplateRecord>& records() const noexcept { return records_; }
  const TemplateRecord& operator[](std::size_t i) const { return records_[i]; }

 private:
  std::vector<TemplateRecord> records_;
  std::size_t dimension_ = 0;
};

// Features of every labeled protein under `state`. Unlabeled proteins are rejected.
TemplateDB build_template_db(const model::ModelState& state,
                             std::span<const encode::EncodedProtein> proteins);

// "DSFT" | u32 LE version | u64 LE count | u64 LE dimension | per record: u32 LE id length +
// id bytes | count x u32 LE fold | count x dimension LE float32 features.
inline constexpr std::uint32_t kTemplateDbVersion = 1;

std::string serialize_template_db(const TemplateDB& db);
TemplateDB deserialize_template_db(const std::string& bytes,
                                   const std::string& source = "template db");
void save_template_db(const TemplateDB& db, const std::filesystem::path& path);
TemplateDB load_template_db(const std::filesystem::path& path);

// One line per record: id, fold, then the feature values, tab-separated.
std::string template_db_tsv(const TemplateDB& db);

}  // namespace foldnet::analyze
