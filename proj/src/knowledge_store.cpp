#include "knowpilot/knowledge_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>

#include <spdlog/spdlog.h>

#include "http_client.hpp"

namespace knowpilot {

void to_json(Json& j, const RawDocument& v) {
    j = Json{{"doc_id", v.doc_id},
             {"title", v.title},
             {"body", v.body},
             {"source_path", v.source_path},
             {"ingested_at", v.ingested_at}};
}

void from_json(const Json& j, RawDocument& v) {
    v.doc_id = j.value("doc_id", std::string{});
    v.title = j.value("title", std::string{});
    j.at("body").get_to(v.body);
    v.source_path = j.value("source_path", std::string{});
    v.ingested_at = j.value("ingested_at", TimestampMs{0});
}

void to_json(Json& j, const ChunkingPolicy& v) {
    j = Json{{"target_size", v.target_size}, {"overlap", v.overlap}};
}

void from_json(const Json& j, ChunkingPolicy& v) {
    j.at("target_size").get_to(v.target_size);
    j.at("overlap").get_to(v.overlap);
}

// ---------------------------------------------------------------------------
// Chunking

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
bool is_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

std::size_t find_cut(std::string_view body, std::size_t min_cut, std::size_t limit) {
    // Paragraph break: cut just after "\n\n".
    if (limit >= 2) {
        for (std::size_t pos = body.rfind("\n\n", limit - 2); pos != std::string_view::npos;
             pos = pos == 0 ? std::string_view::npos : body.rfind("\n\n", pos - 1)) {
            if (pos + 2 < min_cut) break;
            if (pos + 2 <= limit) return pos + 2;
        }
    }
    // Sentence end: terminal punctuation followed by whitespace.
    for (std::size_t i = limit; i-- > 0 && i + 1 >= min_cut;) {
        const char c = body[i];
        if ((c == '.' || c == '!' || c == '?') && i + 1 < body.size() && is_space(body[i + 1])) {
            return i + 2 <= limit ? i + 2 : i + 1;
        }
    }
    std::size_t cut = limit;
    while (cut > min_cut && cut < body.size() && is_continuation(body[cut])) --cut;
    return cut;
}

std::size_t next_start(std::string_view body, std::size_t cut, std::size_t overlap) {
    if (overlap == 0) return cut;
    const std::size_t floor = cut - overlap;
    for (std::size_t p = floor; p < cut; ++p) {
        if ((p == 0 || is_space(body[p - 1])) && !is_space(body[p])) return p;
    }
    std::size_t p = floor;
    while (p < cut && is_continuation(body[p])) ++p;
    return p;
}

}  // namespace

std::vector<TextChunk> chunk_text(std::string_view body, const ChunkingPolicy& policy) {
    if (body.empty()) throw PreconditionViolation("cannot chunk an empty body");
    if (policy.target_size == 0 || policy.overlap >= policy.target_size)
        throw PreconditionViolation("chunking policy needs 0 <= overlap < target_size");
    std::vector<TextChunk> out;
    const std::size_t n = body.size();
    const std::size_t target = policy.target_size;
    std::size_t start = 0;
    while (true) {
        if (n - start <= target) {
            out.push_back({{start, n}, std::string(body.substr(start))});
            break;
        }
        const std::size_t limit = start + target;
        const std::size_t min_cut = start + std::max(policy.overlap + 1, target / 2);
        const std::size_t cut = find_cut(body, min_cut, limit);
        out.push_back({{start, cut}, std::string(body.substr(start, cut - start))});
        start = next_start(body, cut, policy.overlap);
    }
    return out;
}

std::string reconstruct_from_chunks(std::span<const TextChunk> chunks) {
    std::string out;
    std::size_t covered = 0;
    for (const auto& c : chunks) {
        if (c.span.end <= covered) continue;
        const std::size_t skip = covered > c.span.start ? covered - c.span.start : 0;
        out += c.text.substr(skip);
        covered = c.span.end;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding

std::vector<std::string> embedding_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        const bool word = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
        if (word) {
            current.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : raw);
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
    if (dimension_ == 0) throw PreconditionViolation("embedding dimension must be positive");
}

std::string HashingEmbedder::provider_id() const { return "hashing-stub"; }

Embedding HashingEmbedder::embed(std::string_view text) {
    if (text.empty()) throw PreconditionViolation("cannot embed empty text");
    auto tokens = embedding_tokens(text);
    if (tokens.empty()) tokens.emplace_back(text);
    std::vector<double> counts(dimension_, 0.0);
    for (const auto& t : tokens) counts[fnv1a64(t) % dimension_] += 1.0;
    double norm = 0.0;
    for (double c : counts) norm += c * c;
    norm = std::sqrt(norm);
    Embedding out(dimension_);
    for (std::size_t i = 0; i < dimension_; ++i) out[i] = static_cast<float>(counts[i] / norm);
    return out;
}

HttpEmbedder::HttpEmbedder(EndpointConfig endpoint, std::size_t dimension)
    : endpoint_(std::move(endpoint)), dimension_(dimension) {
    if (endpoint_.base_url.empty()) throw PreconditionViolation("embedding endpoint base url not configured");
}

EndpointConfig HttpEmbedder::config_from_env() {
    auto env = [](const char* name) {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    EndpointConfig config;
    config.base_url = env("KNOWPILOT_EMBED_BASE_URL");
    config.model = env("KNOWPILOT_EMBED_MODEL");
    config.api_key = env("KNOWPILOT_EMBED_API_KEY");
    if (config.api_key.empty()) config.api_key = env("KNOWPILOT_LLM_API_KEY");
    return config;
}

Embedding HttpEmbedder::embed(std::string_view text) {
    if (text.empty()) throw PreconditionViolation("cannot embed empty text");
    std::map<std::string, std::string> headers;
    if (!endpoint_.api_key.empty()) headers["Authorization"] = "Bearer " + endpoint_.api_key;
    const Json request{{"model", endpoint_.model}, {"input", std::string(text)}};
    const auto reply = http::post_json(endpoint_.base_url, "/embeddings", request.dump(), headers, endpoint_.timeout);
    if (reply.status != 200) {
        throw EmbeddingUnavailable("embedding endpoint failed: " +
                                   (reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status)));
    }
    Embedding out;
    try {
        const auto body = Json::parse(reply.body);
        for (const auto& v : body.at("data").at(0).at("embedding")) out.push_back(v.get<float>());
    } catch (const Json::exception& e) {
        throw EmbeddingUnavailable(std::string("malformed embedding response: ") + e.what());
    }
    if (out.size() != dimension_)
        throw EmbeddingUnavailable("embedding dimension " + std::to_string(out.size()) + " != configured " +
                                   std::to_string(dimension_));
    return out;
}

namespace {

double norm_of(std::span<const float> v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sum);
}

double dot_of(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return sum;
}

double clamp_unit(double x) { return std::clamp(x, -1.0, 1.0); }

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw PreconditionViolation("cosine similarity of vectors with different dimensions");
    const double na = norm_of(a);
    const double nb = norm_of(b);
    if (na == 0.0 || nb == 0.0) throw DegenerateVector("cosine similarity of a zero vector");
    return clamp_unit(dot_of(a, b) / (na * nb));
}

// ---------------------------------------------------------------------------
// Index

bool ranks_before(const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

void VectorIndex::add(const std::string& id, std::span<const float> embedding) {
    if (embedding.size() != dimension_)
        throw PreconditionViolation("embedding dimension " + std::to_string(embedding.size()) +
                                    " != index dimension " + std::to_string(dimension_));
    if (!std::all_of(embedding.begin(), embedding.end(), [](float x) { return std::isfinite(x); }))
        throw PreconditionViolation("embedding has non-finite components");
    if (positions_.contains(id)) throw PreconditionViolation("duplicate index id " + id);
    const double norm = norm_of(embedding);
    if (norm == 0.0) throw PreconditionViolation("zero embedding for " + id);
    positions_.emplace(id, ids_.size());
    ids_.push_back(id);
    data_.insert(data_.end(), embedding.begin(), embedding.end());
    norms_.push_back(norm);
}

void VectorIndex::remove_last(std::size_t count) {
    count = std::min(count, ids_.size());
    for (std::size_t i = 0; i < count; ++i) {
        positions_.erase(ids_.back());
        ids_.pop_back();
        norms_.pop_back();
    }
    data_.resize(ids_.size() * dimension_);
}

std::vector<ScoredId> VectorIndex::search(std::span<const float> query, std::size_t k) const {
    if (query.size() != dimension_) throw PreconditionViolation("query dimension mismatch");
    if (ids_.empty() || k == 0) return {};
    const double qn = norm_of(query);
    if (qn == 0.0) throw DegenerateVector("zero query vector");
    std::vector<ScoredId> scored;
    scored.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const std::span<const float> row(data_.data() + i * dimension_, dimension_);
        scored.push_back({ids_[i], clamp_unit(dot_of(query, row) / (qn * norms_[i]))});
    }
    const std::size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      ranks_before);
    scored.resize(keep);
    return scored;
}

// ---------------------------------------------------------------------------
// Store

KnowledgeStore::KnowledgeStore(std::filesystem::path directory, std::shared_ptr<Embedder> embedder,
                               Runtime runtime, ChunkingPolicy policy)
    : directory_(std::move(directory)),
      embedder_(std::move(embedder)),
      runtime_(std::move(runtime)),
      policy_(policy),
      index_(embedder_ ? embedder_->dimension() : 0) {
    if (!embedder_) throw PreconditionViolation("knowledge store needs an embedder");
    if (policy_.target_size == 0 || policy_.overlap >= policy_.target_size)
        throw PreconditionViolation("chunking policy needs 0 <= overlap < target_size");
    if (!directory_.empty()) load();
}

void KnowledgeStore::load() {
    std::filesystem::create_directories(directory_);
    const auto meta_path = directory_ / "meta.json";
    if (std::filesystem::exists(meta_path)) {
        Json meta;
        try {
            meta = Json::parse(read_file(meta_path));
        } catch (const Json::exception& e) {
            throw StoreCorrupted("unreadable " + meta_path.string() + ": " + e.what());
        }
        if (meta.value("dimension", std::size_t{0}) != embedder_->dimension())
            throw StoreCorrupted("store dimension " + meta.value("dimension", Json()).dump() +
                                 " does not match embedder dimension " + std::to_string(embedder_->dimension()));
        if (meta.value("provider", std::string{}) != embedder_->provider_id())
            throw StoreCorrupted("store was built with embedder '" + meta.value("provider", std::string{}) +
                                 "', not '" + embedder_->provider_id() + "'");
        if (meta.contains("policy")) policy_ = meta["policy"].get<ChunkingPolicy>();
    } else {
        const Json meta{{"dimension", embedder_->dimension()},
                        {"policy", policy_},
                        {"provider", embedder_->provider_id()}};
        write_file_atomic(meta_path, meta.dump(2) + "\n");
    }

    try {
        std::unordered_map<std::string, KnowledgeChunk> pending;
        for (const auto& line : read_jsonl(directory_ / "chunks.jsonl")) {
            auto chunk = line.get<KnowledgeChunk>();
            pending.emplace(chunk.chunk_id, std::move(chunk));
        }
        // A document line is the commit marker for its chunks; chunks without
        // one come from an interrupted ingestion and are skipped.
        for (const auto& line : read_jsonl(directory_ / "documents.jsonl")) {
            auto doc = line.get<RawDocument>();
            if (doc_positions_.contains(doc.doc_id)) continue;
            for (const auto& id : line.at("chunk_ids")) {
                auto it = pending.find(id.get<std::string>());
                if (it == pending.end())
                    throw StoreCorrupted("document " + doc.doc_id + " references missing chunk " + id.get<std::string>());
                index_.add(it->second.chunk_id, it->second.embedding);
                chunk_positions_.emplace(it->second.chunk_id, chunks_.size());
                chunks_.push_back(std::move(it->second));
                pending.erase(it);
            }
            doc_positions_.emplace(doc.doc_id, documents_.size());
            documents_.push_back(std::move(doc));
        }
    } catch (const StoreCorrupted&) {
        throw;
    } catch (const std::exception& e) {
        throw StoreCorrupted("knowledge store " + directory_.string() + ": " + e.what());
    }
}

std::vector<std::string> KnowledgeStore::ingest_document(RawDocument doc) {
    return ingest_document(std::move(doc), policy_);
}

std::vector<std::string> KnowledgeStore::ingest_document(RawDocument doc, const ChunkingPolicy& policy) {
    if (trim(doc.body).empty()) throw PreconditionViolation("document body is empty");
    // Chunk and embed outside the write lease; only the commit is exclusive.
    const auto pieces = chunk_text(doc.body, policy);
    std::vector<KnowledgeChunk> fresh;
    fresh.reserve(pieces.size());
    for (const auto& piece : pieces) {
        KnowledgeChunk chunk;
        chunk.chunk_id = runtime_.ids->next();
        chunk.text = piece.text;
        chunk.char_span = piece.span;
        try {
            chunk.embedding = embedder_->embed(piece.text);
        } catch (const EmbeddingUnavailable&) {
            throw;
        } catch (const std::exception& e) {
            throw EmbeddingUnavailable(std::string("embedding failed: ") + e.what());
        }
        if (chunk.embedding.size() != embedder_->dimension() ||
            !std::all_of(chunk.embedding.begin(), chunk.embedding.end(), [](float x) { return std::isfinite(x); }))
            throw EmbeddingUnavailable("embedder returned an invalid vector");
        fresh.push_back(std::move(chunk));
    }

    std::unique_lock lock(mutex_);
    if (doc.doc_id.empty()) doc.doc_id = runtime_.ids->next();
    if (doc_positions_.contains(doc.doc_id)) throw DuplicateDocument("document " + doc.doc_id + " already ingested");
    if (doc.ingested_at == 0) doc.ingested_at = runtime_.clock->now_ms();

    std::vector<std::string> ids;
    std::size_t added = 0;
    try {
        for (auto& chunk : fresh) {
            chunk.source_doc = doc.doc_id;
            index_.add(chunk.chunk_id, chunk.embedding);
            ++added;
            ids.push_back(chunk.chunk_id);
        }
        if (!directory_.empty()) {
            std::vector<Json> lines;
            lines.reserve(fresh.size());
            for (const auto& chunk : fresh) lines.emplace_back(chunk);
            append_jsonl_lines(directory_ / "chunks.jsonl", lines);
            Json doc_line = doc;
            doc_line["chunk_ids"] = ids;
            append_jsonl(directory_ / "documents.jsonl", doc_line);
        }
    } catch (...) {
        index_.remove_last(added);
        throw;
    }
    for (auto& chunk : fresh) {
        chunk_positions_.emplace(chunk.chunk_id, chunks_.size());
        chunks_.push_back(std::move(chunk));
    }
    doc_positions_.emplace(doc.doc_id, documents_.size());
    spdlog::debug("knowledge-store: ingested {} as {} chunks", doc.doc_id, ids.size());
    documents_.push_back(std::move(doc));
    return ids;
}

std::vector<RetrievalResult> KnowledgeStore::retrieve_top_k(std::string_view query, int k) const {
    if (k < 1) throw PreconditionViolation("k must be at least 1");
    if (trim(query).empty()) throw PreconditionViolation("query is empty");
    {
        std::shared_lock lock(mutex_);
        if (index_.size() == 0) return {};
    }
    const auto query_embedding = embedder_->embed(query);
    std::shared_lock lock(mutex_);
    const auto hits = index_.search(query_embedding, static_cast<std::size_t>(k));
    std::vector<RetrievalResult> out;
    out.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        out.push_back({chunks_[chunk_positions_.at(hits[i].id)], hits[i].score, static_cast<int>(i + 1)});
    }
    return out;
}

std::optional<KnowledgeChunk> KnowledgeStore::chunk(const std::string& chunk_id) const {
    std::shared_lock lock(mutex_);
    auto it = chunk_positions_.find(chunk_id);
    if (it == chunk_positions_.end()) return std::nullopt;
    return chunks_[it->second];
}

std::optional<RawDocument> KnowledgeStore::document(const std::string& doc_id) const {
    std::shared_lock lock(mutex_);
    auto it = doc_positions_.find(doc_id);
    if (it == doc_positions_.end()) return std::nullopt;
    return documents_[it->second];
}

std::vector<RawDocument> KnowledgeStore::documents() const {
    std::shared_lock lock(mutex_);
    return documents_;
}

std::vector<KnowledgeChunk> KnowledgeStore::chunks() const {
    std::shared_lock lock(mutex_);
    return chunks_;
}

std::size_t KnowledgeStore::chunk_count() const {
    std::shared_lock lock(mutex_);
    return chunks_.size();
}

std::size_t KnowledgeStore::document_count() const {
    std::shared_lock lock(mutex_);
    return documents_.size();
}

}  // namespace knowpilot
