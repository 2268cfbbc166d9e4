#ifndef PIISTEER_EXTRACTION_HPP_
#define PIISTEER_EXTRACTION_HPP_

#include <map>
#include <set>
#include <string>
#include <vector>

#include "piisteer/corpus.hpp"
#include "piisteer/directions.hpp"
#include "piisteer/selfgen.hpp"

namespace piisteer {

/// Deduplicated canonical PII of one class recovered by one method. For each
/// item the tokens preceding its first occurrence are kept as provenance.
struct ExtractedSet {
  std::string method;
  PiiClass cls = PiiClass::kEmail;
  std::set<std::string> items;
  std::map<std::string, std::vector<TokenId>> first_prefix;
  int spans = 0;        // annotated spans before deduplication
  int generations = 0;  // sequences scanned
};

ExtractedSet extract_from_batch(const GenerationBatch& batch, PiiClass cls, std::string method,
                                const Gazetteer& gazetteer = Gazetteer::builtin());

/// Intervention applied at the first token position only.
InterventionSpec first_token_intervention(const DirectionSet& directions, int sign);

/// Throws CompatibilityError if the directions do not fit the model.
void check_compatible(const DirectionSet& directions, const ModelConfig& config);

/// Generates n sequences with the strategy, optionally steered by
/// sign * directions at the first position, and collects class-c PII.
ExtractedSet extract(const Transformer<float>& model, const ExtractionStrategy& strategy, PiiClass cls,
                     const DirectionSet* directions, int sign, int n, int length, std::string method,
                     GenerationBatch* batch_out = nullptr);

struct TrainCounts {
  int train_hits = 0;
  int novel = 0;
};

TrainCounts count_train_pii(const ExtractedSet& extracted, const std::set<std::string>& train_values);
TrainCounts count_train_pii(const ExtractedSet& extracted, const Corpus& corpus);

/// Membership statistics of up to 16 sets. region_counts[m] is the number
/// of items whose membership bitmask is exactly m; intersection_sizes[m] is
/// the size of the intersection of the sets selected by m.
struct OverlapReport {
  PiiClass cls = PiiClass::kEmail;
  std::vector<std::string> methods;
  std::vector<int> sizes;
  std::vector<int> exclusive;
  std::vector<std::vector<int>> pairwise;
  std::map<unsigned, int> region_counts;
  std::map<unsigned, int> intersection_sizes;
  int union_size = 0;

  /// Union recomputed by inclusion-exclusion from intersection_sizes.
  long inclusion_exclusion_union() const;
  Json to_json() const;
  /// One row per nonempty Venn region: the member methods and the count.
  std::string venn_csv() const;
};

OverlapReport overlap(std::span<const ExtractedSet> sets);

struct TransferMatrix {
  std::vector<std::string> attacks;      // rows
  std::vector<std::string> direction_sources;  // columns
  std::vector<std::vector<int>> train_hits;

  std::string csv() const;
  Json to_json() const;
};

/// Every attack strategy crossed with every direction set.
TransferMatrix transfer_matrix(const Transformer<float>& model,
                               const std::vector<std::pair<std::string, ExtractionStrategy>>& attacks,
                               const std::map<std::string, DirectionSet>& directions, PiiClass cls, int n,
                               int length, const std::set<std::string>& train_values);

Json extraction_report(const ExtractedSet& extracted, const TrainCounts& counts);

/// Plain-text dump of up to `max_samples` generations that contain class-c PII,
/// with the spans bracketed.
std::string qualitative_dump(const GenerationBatch& batch, PiiClass cls, int max_samples,
                             const Gazetteer& gazetteer = Gazetteer::builtin());

}  // namespace piisteer

#endif  // PIISTEER_EXTRACTION_HPP_
