#include "fairpairs/annotation_service.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <openssl/rand.h>
#include <spdlog/spdlog.h>

#include "fairpairs/text.hpp"

namespace fairpairs {

// ─── Battery ────────────────────────────────────────────────────────────────

const Question &Battery::question(std::string_view key) const {
    for (const auto &q : questions)
        if (q.key == key) return q;
    throw PreconditionError(fmt::format("battery {} has no question '{}'", name, key));
}

const Battery &BatteryFile::get(std::string_view name) const {
    auto it = batteries.find(std::string(name));
    if (it == batteries.end()) throw PreconditionError(fmt::format("unknown battery '{}'", name));
    return it->second;
}

BatteryFile BatteryFile::from_json(const json &j) {
    BatteryFile f;
    f.raw = j;
    try {
        for (const auto &[name, b] : j.at("batteries").items()) {
            Battery battery;
            battery.name = name;
            battery.fairness_question = b.at("fairness_question").get<std::string>();
            for (const auto &q : b.at("questions")) {
                Question question{q.at("key").get<std::string>(), q.at("text").get<std::string>(),
                                  q.at("options").get<std::vector<std::string>>(),
                                  q.value("summary_option", std::size_t{0})};
                if (question.options.size() < 2)
                    throw FormatError(fmt::format("question {} needs at least two options", question.key));
                battery.questions.push_back(std::move(question));
            }
            battery.question(battery.fairness_question);
            f.batteries[name] = std::move(battery);
        }
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("battery file: {}", e.what()));
    }
    return f;
}

BatteryFile BatteryFile::load(const std::filesystem::path &path) {
    try {
        return from_json(json::parse(text::read_file(path)));
    } catch (const json::parse_error &e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string substitute_groups(std::string_view in, std::string_view group_a, std::string_view group_b) {
    std::string out(in);
    for (const auto &[ph, value] : {std::pair{std::string_view("{group_a}"), group_a}, {"{group_b}", group_b}}) {
        for (auto pos = out.find(ph); pos != std::string::npos; pos = out.find(ph, pos + value.size()))
            out.replace(pos, ph.size(), value);
    }
    return out;
}

GoldPair GoldPair::from_json(const json &j) {
    try {
        GoldPair g{j.at("s").get<std::string>(),        j.at("s_prime").get<std::string>(),
                   j.value("group_a", std::string()),    j.value("group_b", std::string()),
                   j.at("expected_vote").get<int>(),     j.value("note", std::string())};
        if (g.expected_vote != 0 && g.expected_vote != 1) throw FormatError("expected_vote must be 0 or 1");
        return g;
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("gold pair: {}", e.what()));
    }
}

json GoldPair::to_json() const {
    return {{"s", s}, {"s_prime", s_prime}, {"group_a", group_a}, {"group_b", group_b},
            {"expected_vote", expected_vote}, {"note", note}};
}

std::vector<GoldPair> load_gold_pairs(const std::filesystem::path &path) {
    std::vector<GoldPair> out;
    for (const auto &row : text::read_jsonl(path)) out.push_back(GoldPair::from_json(row));
    return out;
}

std::string to_string(Qualification q) {
    switch (q) {
    case Qualification::unqualified: return "unqualified";
    case Qualification::qualified: return "qualified";
    case Qualification::blocked: return "blocked";
    }
    return "unqualified";
}

std::string to_string(BlockOutcome o) { return o == BlockOutcome::accepted ? "accepted" : "flagged"; }

json BlockItem::client_json() const {
    return {{"slot", slot}, {"comment_a", s}, {"comment_b", s_prime}, {"group_a", group_a}, {"group_b", group_b}};
}

json TaskBlock::client_json(const Battery &battery) const {
    json items_json = json::array();
    for (const auto &it : items) {
        auto j = it.client_json();
        json qs = json::array();
        for (const auto &q : battery.questions) {
            json opts = json::array();
            for (const auto &o : q.options) opts.push_back(substitute_groups(o, it.group_a, it.group_b));
            qs.push_back({{"key", q.key}, {"text", substitute_groups(q.text, it.group_a, it.group_b)}, {"options", opts}});
        }
        j["questions"] = qs;
        j["explanation_required"] = it.slot == explanation_index;
        items_json.push_back(std::move(j));
    }
    return {{"block_id", id}, {"campaign", campaign}, {"battery", battery.name},
            {"explanation_index", explanation_index}, {"items", items_json}};
}

std::string random_token(std::size_t bytes) {
    std::vector<unsigned char> buf(bytes);
    if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) throw Error("random token generation failed");
    std::string out;
    for (auto b : buf) out += fmt::format("{:02x}", b);
    return out;
}

// ─── Service ────────────────────────────────────────────────────────────────

namespace {
constexpr std::size_t kQualificationItems = 10;
constexpr std::size_t kQualificationPass = 9;
} // namespace

AnnotationService::AnnotationService(BatteryFile batteries, std::vector<GoldPair> qualification,
                                     std::vector<GoldPair> attention_checks, std::uint64_t seed)
    : batteries_(std::move(batteries)), qualification_(std::move(qualification)),
      attention_(std::move(attention_checks)), rng_(seed) {
    if (qualification_.size() < kQualificationItems)
        throw PreconditionError(fmt::format("qualification needs {} gold pairs, got {}", kQualificationItems,
                                            qualification_.size()));
    qualification_.resize(kQualificationItems);
    if (attention_.empty()) throw PreconditionError("at least one attention-check pair is required");
}

AnnotationService::Campaign &AnnotationService::campaign_ref(const std::string &id) {
    auto it = campaigns_.find(id);
    if (it == campaigns_.end()) throw PreconditionError(fmt::format("unknown campaign '{}'", id));
    return it->second;
}

const AnnotationService::Campaign &AnnotationService::campaign_ref(const std::string &id) const {
    auto it = campaigns_.find(id);
    if (it == campaigns_.end()) throw PreconditionError(fmt::format("unknown campaign '{}'", id));
    return it->second;
}

AnnotationService::Worker &AnnotationService::worker_ref(const std::string &id) {
    auto it = workers_.find(id);
    if (it == workers_.end()) throw PreconditionError(fmt::format("unknown worker '{}'", id));
    return it->second;
}

std::string AnnotationService::register_worker(const std::string &worker_id) {
    if (text::trim(worker_id).empty()) throw PreconditionError("worker id must not be empty");
    std::lock_guard lock(mutex_);
    workers_.try_emplace(worker_id);
    auto token = random_token();
    tokens_[token] = worker_id;
    return token;
}

std::optional<std::string> AnnotationService::worker_for_token(const std::string &token) const {
    std::lock_guard lock(mutex_);
    auto it = tokens_.find(token);
    if (it == tokens_.end()) return std::nullopt;
    return it->second;
}

Qualification AnnotationService::qualification(const std::string &worker_id) const {
    std::lock_guard lock(mutex_);
    auto it = workers_.find(worker_id);
    if (it == workers_.end()) throw PreconditionError(fmt::format("unknown worker '{}'", worker_id));
    return it->second.status;
}

void AnnotationService::block_worker(const std::string &worker_id) {
    std::lock_guard lock(mutex_);
    worker_ref(worker_id).status = Qualification::blocked;
}

std::vector<BlockItem> AnnotationService::qualification_items() const {
    std::vector<BlockItem> out;
    for (std::size_t i = 0; i < qualification_.size(); ++i) {
        const auto &g = qualification_[i];
        out.push_back({i, g.s, g.s_prime, g.group_a, g.group_b, std::nullopt, std::nullopt});
    }
    return out;
}

Qualification AnnotationService::submit_qualification(const std::string &worker_id,
                                                      const std::vector<std::size_t> &answers) {
    std::lock_guard lock(mutex_);
    auto &w = worker_ref(worker_id);
    if (w.attempted) throw PreconditionError(fmt::format("worker {} already took the qualification test", worker_id));
    if (answers.size() != qualification_.size())
        throw PreconditionError(fmt::format("qualification needs {} answers, got {}", qualification_.size(), answers.size()));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < answers.size(); ++i)
        correct += Battery::fairness_vote(answers[i]) == qualification_[i].expected_vote;
    w.attempted = true;
    if (w.status != Qualification::blocked)
        w.status = correct >= kQualificationPass ? Qualification::qualified : Qualification::unqualified;
    return w.status;
}

void AnnotationService::create_campaign(CampaignConfig config) {
    if (config.id.empty()) throw PreconditionError("campaign id must not be empty");
    if (config.votes_per_pair < 1) throw PreconditionError("votes per pair must be at least 1");
    if (config.block_pairs < 1) throw PreconditionError("blocks need at least one pair");
    if (config.pairs.empty()) throw PreconditionError("campaign has no pairs");
    batteries_.get(config.battery);
    std::lock_guard lock(mutex_);
    if (campaigns_.count(config.id)) throw PreconditionError(fmt::format("campaign '{}' already exists", config.id));
    Campaign c{std::move(config), true, {}, {}, {}, Rng(0)};
    c.rng.seed(c.config.seed);
    std::sort(c.config.pairs.begin(), c.config.pairs.end(),
              [](const PairCandidate &a, const PairCandidate &b) { return a.id < b.id; });
    for (std::size_t i = 0; i < c.config.pairs.size(); ++i)
        if (!c.index.emplace(c.config.pairs[i].id, i).second)
            throw PreconditionError(fmt::format("campaign pair {} listed twice", c.config.pairs[i].id));
    const auto id = c.config.id;
    campaigns_.emplace(id, std::move(c));
}

void AnnotationService::close_campaign(const std::string &campaign) {
    std::lock_guard lock(mutex_);
    auto &c = campaign_ref(campaign);
    c.open = false;
    for (auto it = blocks_.begin(); it != blocks_.end();) {
        if (it->second.block.campaign == campaign && !it->second.responses) {
            release(it->second);
            it = blocks_.erase(it);
        } else {
            ++it;
        }
    }
}

bool AnnotationService::campaign_open(const std::string &campaign) const {
    std::lock_guard lock(mutex_);
    return campaign_ref(campaign).open;
}

std::string AnnotationService::campaign_battery(const std::string &campaign) const {
    std::lock_guard lock(mutex_);
    return campaign_ref(campaign).config.battery;
}

void AnnotationService::release(PendingBlock &pending) {
    auto &c = campaign_ref(pending.block.campaign);
    for (const auto &it : pending.block.items)
        if (it.pair_id) --c.reserved[*it.pair_id];
}

void AnnotationService::expire_blocks(Campaign &c) {
    const auto now = std::chrono::steady_clock::now();
    for (auto it = blocks_.begin(); it != blocks_.end();) {
        auto &p = it->second;
        if (p.block.campaign == c.config.id && !p.responses && now - p.issued > c.config.block_timeout) {
            spdlog::info("block {} expired", p.block.id);
            release(p);
            it = blocks_.erase(it);
        } else {
            ++it;
        }
    }
}

TaskBlock AnnotationService::next_block(const std::string &campaign, const std::string &worker_id) {
    std::lock_guard lock(mutex_);
    auto &c = campaign_ref(campaign);
    auto &w = worker_ref(worker_id);
    if (w.status != Qualification::qualified)
        throw PreconditionError(fmt::format("worker {} is {}", worker_id, to_string(w.status)));
    if (!c.open) throw PreconditionError(fmt::format("campaign {} is closed", campaign));
    expire_blocks(c);

    std::vector<std::pair<std::size_t, std::size_t>> candidates; // (load, position)
    for (std::size_t i = 0; i < c.config.pairs.size(); ++i) {
        const auto &id = c.config.pairs[i].id;
        if (w.seen.count({campaign, id})) continue;
        const auto acc = c.accepted.count(id) ? c.accepted.at(id).size() : 0;
        const auto load = acc + c.reserved[id];
        if (load >= c.config.votes_per_pair) continue;
        candidates.emplace_back(load, i);
    }
    if (candidates.empty())
        throw PreconditionError(fmt::format("campaign {} is exhausted for worker {}", campaign, worker_id));
    std::shuffle(candidates.begin(), candidates.end(), c.rng);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto &a, const auto &b) { return a.first < b.first; });
    candidates.resize(std::min(candidates.size(), c.config.block_pairs));

    TaskBlock block;
    block.id = fmt::format("b{:06d}-{}", next_block_++, random_token(4));
    block.campaign = campaign;
    block.worker = worker_id;
    const auto n = candidates.size() + 1;
    const auto check_slot = std::uniform_int_distribution<std::size_t>(0, n - 1)(c.rng);
    const auto &check = attention_[std::uniform_int_distribution<std::size_t>(0, attention_.size() - 1)(c.rng)];
    std::size_t next = 0;
    for (std::size_t slot = 0; slot < n; ++slot) {
        if (slot == check_slot) {
            block.items.push_back({slot, check.s, check.s_prime, check.group_a, check.group_b, std::nullopt,
                                   check.expected_vote});
            continue;
        }
        const auto &p = c.config.pairs[candidates[next++].second];
        block.items.push_back({slot, p.s, p.s_prime, p.source_group, p.target_group, p.id, std::nullopt});
        ++c.reserved[p.id];
        w.seen.insert({campaign, p.id});
    }
    block.explanation_index = std::uniform_int_distribution<std::size_t>(0, n - 1)(c.rng);
    blocks_[block.id] = {block, std::chrono::steady_clock::now(), std::nullopt, {}};
    return block;
}

void AnnotationService::accept(PendingBlock &pending, const std::vector<ItemResponse> &responses) {
    auto &c = campaign_ref(pending.block.campaign);
    for (std::size_t i = 0; i < pending.block.items.size(); ++i) {
        const auto &item = pending.block.items[i];
        if (!item.pair_id) continue;
        --c.reserved[*item.pair_id];
        auto &judgments = c.accepted[*item.pair_id];
        if (judgments.size() >= c.config.votes_per_pair) continue; // quota met meanwhile
        judgments.push_back({pending.block.worker, responses[i].answers, responses[i].explanation.value_or("")});
    }
}

BlockOutcome AnnotationService::submit_block(const std::string &worker_id, const std::string &block_id,
                                             const std::vector<ItemResponse> &responses) {
    std::lock_guard lock(mutex_);
    auto it = blocks_.find(block_id);
    if (it == blocks_.end()) throw PreconditionError(fmt::format("unknown or expired block '{}'", block_id));
    auto &pending = it->second;
    if (pending.block.worker != worker_id) throw PreconditionError("block belongs to another worker");
    if (pending.responses) throw PreconditionError(fmt::format("block {} was already submitted", block_id));
    auto &c = campaign_ref(pending.block.campaign);
    if (!c.open) throw PreconditionError(fmt::format("campaign {} is closed", c.config.id));
    const auto &battery = batteries_.get(c.config.battery);

    if (responses.size() != pending.block.items.size())
        throw PreconditionError(fmt::format("incomplete submission: {} of {} items answered", responses.size(),
                                            pending.block.items.size()));
    for (std::size_t i = 0; i < responses.size(); ++i)
        for (const auto &q : battery.questions) {
            auto a = responses[i].answers.find(q.key);
            if (a == responses[i].answers.end())
                throw PreconditionError(fmt::format("incomplete submission: item {} lacks '{}'", i, q.key));
            if (a->second >= q.options.size())
                throw PreconditionError(fmt::format("item {}: option {} out of range for '{}'", i, a->second, q.key));
        }
    const auto &explanation = responses[pending.block.explanation_index].explanation;
    if (!explanation)
        throw PreconditionError(fmt::format("incomplete submission: explanation missing at item {}",
                                            pending.block.explanation_index));

    std::vector<std::string> reasons;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const auto &item = pending.block.items[i];
        if (item.expected_vote &&
            Battery::fairness_vote(responses[i].answers.at(battery.fairness_question)) != *item.expected_vote)
            reasons.push_back("attention check failed");
    }
    if (text::trim(*explanation).empty()) reasons.push_back("empty explanation");

    if (reasons.empty()) {
        accept(pending, responses);
        blocks_.erase(it);
        return BlockOutcome::accepted;
    }
    pending.responses = responses;
    pending.reasons = std::move(reasons);
    return BlockOutcome::flagged;
}

std::vector<ReviewEntry> AnnotationService::review_queue() const {
    std::lock_guard lock(mutex_);
    std::vector<ReviewEntry> out;
    for (const auto &[id, p] : blocks_)
        if (p.responses) out.push_back({id, p.block.campaign, p.block.worker, p.reasons});
    return out;
}

void AnnotationService::review(const std::string &block_id, bool approve) {
    std::lock_guard lock(mutex_);
    auto it = blocks_.find(block_id);
    if (it == blocks_.end() || !it->second.responses)
        throw PreconditionError(fmt::format("block '{}' is not awaiting review", block_id));
    if (approve) accept(it->second, *it->second.responses);
    else release(it->second);
    blocks_.erase(it);
}

std::map<std::string, std::vector<int>> AnnotationService::accepted_votes(const std::string &campaign) const {
    std::lock_guard lock(mutex_);
    const auto &c = campaign_ref(campaign);
    const auto &fq = batteries_.get(c.config.battery).fairness_question;
    std::map<std::string, std::vector<int>> out;
    for (const auto &[id, js] : c.accepted)
        for (const auto &j : js) out[id].push_back(Battery::fairness_vote(j.answers.at(fq)));
    return out;
}

std::vector<VoteRecord> AnnotationService::vote_records(const std::string &campaign) const {
    std::lock_guard lock(mutex_);
    const auto &c = campaign_ref(campaign);
    const auto &fq = batteries_.get(c.config.battery).fairness_question;
    std::vector<VoteRecord> out;
    for (const auto &[id, js] : c.accepted)
        for (const auto &j : js) out.push_back({id, j.worker, Battery::fairness_vote(j.answers.at(fq))});
    return out;
}

LabelStore AnnotationService::label_store(const std::string &campaign) const {
    LabelStore store;
    for (const auto &[id, votes] : accepted_votes(campaign))
        if (!votes.empty()) store.add_votes(id, votes);
    return store;
}

CampaignExport AnnotationService::export_campaign(const std::string &campaign) const {
    {
        std::lock_guard lock(mutex_);
        const auto &c = campaign_ref(campaign);
        if (c.open) {
            for (const auto &p : c.config.pairs) {
                auto it = c.accepted.find(p.id);
                if (it == c.accepted.end() || it->second.size() < c.config.votes_per_pair)
                    throw PreconditionError(fmt::format("campaign {} is open and pair {} is below quota", campaign, p.id));
            }
        }
    }
    CampaignExport out;
    const auto store = label_store(campaign);
    out.label_store_jsonl = store.to_jsonl();
    std::lock_guard lock(mutex_);
    for (const auto &p : campaign_ref(campaign).config.pairs)
        if (!store.contains(p.id)) out.unlabeled.push_back(p.id);
    return out;
}

json AnnotationService::question_rates(const std::string &campaign) const {
    std::lock_guard lock(mutex_);
    const auto &c = campaign_ref(campaign);
    const auto &battery = batteries_.get(c.config.battery);
    struct Tally {
        double answers = 0, hits = 0, pairs = 0, majority_hits = 0;
    };
    std::map<std::string, std::map<std::string, Tally>> tallies; // method -> question -> tally
    for (const auto &[id, js] : c.accepted) {
        if (js.empty()) continue;
        const auto &method = c.config.pairs[c.index.at(id)].method;
        for (const auto &q : battery.questions) {
            double hits = 0;
            for (const auto &j : js) hits += j.answers.at(q.key) == q.summary_option;
            for (const auto *m : {&method, static_cast<const std::string *>(nullptr)}) {
                auto &t = tallies[m ? *m : std::string("all")][q.key];
                t.answers += static_cast<double>(js.size());
                t.hits += hits;
                t.pairs += 1;
                t.majority_hits += 2 * hits > static_cast<double>(js.size());
            }
        }
    }
    json out = json::object();
    for (const auto &[method, qs] : tallies)
        for (const auto &[key, t] : qs)
            out[method][key] = {{"all_queries", 100.0 * t.hits / t.answers},
                                {"majority", 100.0 * t.majority_hits / t.pairs},
                                {"pairs", t.pairs},
                                {"answers", t.answers}};
    return out;
}

} // namespace fairpairs
