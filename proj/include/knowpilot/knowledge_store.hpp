#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "knowpilot/domain.hpp"
#include "knowpilot/llm_gateway.hpp"

namespace knowpilot {

inline constexpr int kDefaultTopK = 5;

struct RawDocument {
    std::string doc_id;
    std::string title;
    std::string body;
    std::string source_path;
    TimestampMs ingested_at = 0;

    bool operator==(const RawDocument&) const = default;
};

void to_json(Json& j, const RawDocument& v);
void from_json(const Json& j, RawDocument& v);

struct ChunkingPolicy {
    std::size_t target_size = 800;
    std::size_t overlap = 200;

    bool operator==(const ChunkingPolicy&) const = default;
};

void to_json(Json& j, const ChunkingPolicy& v);
void from_json(const Json& j, ChunkingPolicy& v);

struct TextChunk {
    CharSpan span;
    std::string text;
};

/// Splits body into chunks of at most target_size bytes, cutting at the last
/// paragraph break in the window, else the last sentence end, else a hard cut
/// on a UTF-8 boundary. Consecutive chunks overlap by at most policy.overlap.
std::vector<TextChunk> chunk_text(std::string_view body, const ChunkingPolicy& policy);

/// Inverse of chunking: concatenation with overlaps removed.
std::string reconstruct_from_chunks(std::span<const TextChunk> chunks);

// ---------------------------------------------------------------------------
// Embedding

class Embedder {
public:
    virtual ~Embedder() = default;
    /// Finite vector of dimension(). Throws EmbeddingUnavailable.
    virtual Embedding embed(std::string_view text) = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::string provider_id() const = 0;
};

/// Offline embedder: lowercase words (ASCII alphanumerics, bytes >= 0x80
/// count as word characters) are hashed with FNV-1a into `dimension`
/// buckets, counted, then L2-normalized. Text with no word characters is
/// hashed as a single token.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dimension = kDefaultEmbeddingDimension);

    Embedding embed(std::string_view text) override;
    std::size_t dimension() const override { return dimension_; }
    std::string provider_id() const override;

private:
    std::size_t dimension_;
};

/// Lowercased word tokens as seen by HashingEmbedder.
std::vector<std::string> embedding_tokens(std::string_view text);

/// OpenAI-compatible /embeddings client (e.g. a served sentence encoder).
/// Reads KNOWPILOT_EMBED_BASE_URL, KNOWPILOT_EMBED_MODEL and
/// KNOWPILOT_EMBED_API_KEY (falling back to KNOWPILOT_LLM_API_KEY).
class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(EndpointConfig endpoint, std::size_t dimension);
    static EndpointConfig config_from_env();

    Embedding embed(std::string_view text) override;
    std::size_t dimension() const override { return dimension_; }
    std::string provider_id() const override { return "openai-embeddings:" + endpoint_.model; }

private:
    EndpointConfig endpoint_;
    std::size_t dimension_;
};

/// dot(a,b) / (|a||b|), clamped to [-1, 1]. Throws DegenerateVector for a
/// zero vector and PreconditionViolation on a dimension mismatch.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// ---------------------------------------------------------------------------
// Index

struct ScoredId {
    std::string id;
    double score = 0.0;
};

/// Orders by score descending, then id ascending.
bool ranks_before(const ScoredId& a, const ScoredId& b);

/// Exact cosine scan. Not internally synchronized.
class VectorIndex {
public:
    explicit VectorIndex(std::size_t dimension) : dimension_(dimension) {}

    std::size_t dimension() const { return dimension_; }
    std::size_t size() const { return ids_.size(); }

    /// Throws PreconditionViolation on wrong dimension, non-finite values or
    /// a duplicate id.
    void add(const std::string& id, std::span<const float> embedding);
    void remove_last(std::size_t count);

    /// Up to k best entries, see ranks_before.
    std::vector<ScoredId> search(std::span<const float> query, std::size_t k) const;

private:
    std::size_t dimension_;
    std::vector<std::string> ids_;
    std::vector<float> data_;     // row-major, dimension_ per entry
    std::vector<double> norms_;
    std::unordered_map<std::string, std::size_t> positions_;
};

// ---------------------------------------------------------------------------
// Store

/// Private knowledge base. Layout under the store directory: documents.jsonl,
/// chunks.jsonl and meta.json. Many concurrent readers, one writer.
class KnowledgeStore {
public:
    /// Opens or bootstraps `directory`; an empty path keeps everything in
    /// memory. Throws StoreCorrupted when meta.json disagrees with `embedder`.
    KnowledgeStore(std::filesystem::path directory, std::shared_ptr<Embedder> embedder,
                   Runtime runtime, ChunkingPolicy policy = {});

    /// Chunks, embeds and indexes the document. Atomic: on any failure the
    /// store is left as it was. Returns the new chunk ids in order.
    std::vector<std::string> ingest_document(RawDocument doc);
    std::vector<std::string> ingest_document(RawDocument doc, const ChunkingPolicy& policy);

    std::vector<RetrievalResult> retrieve_top_k(std::string_view query, int k = kDefaultTopK) const;

    std::optional<KnowledgeChunk> chunk(const std::string& chunk_id) const;
    std::optional<RawDocument> document(const std::string& doc_id) const;
    std::vector<RawDocument> documents() const;
    std::vector<KnowledgeChunk> chunks() const;
    std::size_t chunk_count() const;
    std::size_t document_count() const;

    const ChunkingPolicy& policy() const { return policy_; }
    std::size_t dimension() const { return embedder_->dimension(); }
    Embedder& embedder() const { return *embedder_; }
    const std::filesystem::path& directory() const { return directory_; }

private:
    void load();

    std::filesystem::path directory_;
    std::shared_ptr<Embedder> embedder_;
    Runtime runtime_;
    ChunkingPolicy policy_;

    mutable std::shared_mutex mutex_;
    std::vector<RawDocument> documents_;
    std::unordered_map<std::string, std::size_t> doc_positions_;
    std::vector<KnowledgeChunk> chunks_;
    std::unordered_map<std::string, std::size_t> chunk_positions_;
    VectorIndex index_;
};

}  // namespace knowpilot
