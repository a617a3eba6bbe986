#pragma once

// Human labeling campaigns: qualification, 11-item task blocks with an
// attention check, review of flagged blocks, and export of majority labels.
// All state lives behind one mutex; the HTTP layer is a thin wrapper.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fairpairs/active_learning.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

struct Question {
    std::string key;
    std::string text;
    std::vector<std::string> options;
    std::size_t summary_option = 0; // the answer counted in per-question rates
};

struct Battery {
    std::string name;
    std::string fairness_question;
    std::vector<Question> questions;

    const Question &question(std::string_view key) const;
    // Vote 0 iff the first fairness option ("It would be unfair ...") was chosen.
    static int fairness_vote(std::size_t option) { return option == 0 ? 0 : 1; }
};

struct BatteryFile {
    json raw;
    std::map<std::string, Battery> batteries;

    const Battery &get(std::string_view name) const;
    static BatteryFile from_json(const json &j);
    static BatteryFile load(const std::filesystem::path &path);
};

// Replaces {group_a} / {group_b} placeholders.
std::string substitute_groups(std::string_view text, std::string_view group_a, std::string_view group_b);

// A hand-checked pair with a known fairness vote, used for qualification
// and attention checks.
struct GoldPair {
    std::string s;
    std::string s_prime;
    std::string group_a;
    std::string group_b;
    int expected_vote = 0;
    std::string note;

    static GoldPair from_json(const json &j);
    json to_json() const;
};

std::vector<GoldPair> load_gold_pairs(const std::filesystem::path &path);

enum class Qualification { unqualified, qualified, blocked };
std::string to_string(Qualification q);

struct CampaignConfig {
    std::string id;
    std::vector<PairCandidate> pairs;
    std::size_t votes_per_pair = 9;
    std::string battery = "fairness_only";
    std::uint64_t seed = 0;
    std::size_t block_pairs = 10;
    std::chrono::seconds block_timeout{3600};
};

struct BlockItem {
    std::size_t slot = 0;
    std::string s;
    std::string s_prime;
    std::string group_a;
    std::string group_b;
    std::optional<std::string> pair_id; // empty for the attention check
    std::optional<int> expected_vote;   // attention check only

    json client_json() const; // never reveals which item is the check
};

struct TaskBlock {
    std::string id;
    std::string campaign;
    std::string worker;
    std::vector<BlockItem> items;
    std::size_t explanation_index = 0;

    json client_json(const Battery &battery) const;
};

struct ItemResponse {
    std::map<std::string, std::size_t> answers; // question key -> option index
    std::optional<std::string> explanation;
};

enum class BlockOutcome { accepted, flagged };
std::string to_string(BlockOutcome o);

struct ReviewEntry {
    std::string block_id;
    std::string campaign;
    std::string worker;
    std::vector<std::string> reasons;
};

struct CampaignExport {
    std::string label_store_jsonl;
    std::vector<std::string> unlabeled;
};

struct VoteRecord {
    std::string pair_id;
    std::string worker;
    int vote = 0;
};

class AnnotationService {
  public:
    AnnotationService(BatteryFile batteries, std::vector<GoldPair> qualification, std::vector<GoldPair> attention_checks,
                      std::uint64_t seed = 0);

    const BatteryFile &batteries() const { return batteries_; }

    // Returns a fresh bearer token for the worker.
    std::string register_worker(const std::string &worker_id);
    std::optional<std::string> worker_for_token(const std::string &token) const;
    Qualification qualification(const std::string &worker_id) const;
    void block_worker(const std::string &worker_id);

    std::vector<BlockItem> qualification_items() const;
    // answers[i] is the chosen fairness option for qualification item i.
    // Qualified iff at least 9 of 10 match. A second attempt throws.
    Qualification submit_qualification(const std::string &worker_id, const std::vector<std::size_t> &answers);

    void create_campaign(CampaignConfig config);
    void close_campaign(const std::string &campaign);
    bool campaign_open(const std::string &campaign) const;
    std::string campaign_battery(const std::string &campaign) const;

    TaskBlock next_block(const std::string &campaign, const std::string &worker_id);
    // Throws PreconditionError on an incomplete submission.
    BlockOutcome submit_block(const std::string &worker_id, const std::string &block_id,
                              const std::vector<ItemResponse> &responses);

    std::vector<ReviewEntry> review_queue() const;
    void review(const std::string &block_id, bool approve);

    std::map<std::string, std::vector<int>> accepted_votes(const std::string &campaign) const;
    std::vector<VoteRecord> vote_records(const std::string &campaign) const;
    LabelStore label_store(const std::string &campaign) const;
    // Needs the campaign closed or every quota met.
    CampaignExport export_campaign(const std::string &campaign) const;
    // Per method and overall: share of all answers and of per-pair majorities
    // that picked each question's summary option, in percent.
    json question_rates(const std::string &campaign) const;

  private:
    struct Judgment {
        std::string worker;
        std::map<std::string, std::size_t> answers;
        std::string explanation;
    };
    struct PendingBlock {
        TaskBlock block;
        std::chrono::steady_clock::time_point issued;
        std::optional<std::vector<ItemResponse>> responses; // set once flagged
        std::vector<std::string> reasons;
    };
    struct Campaign {
        CampaignConfig config;
        bool open = true;
        std::map<std::string, std::size_t> index; // pair id -> position
        std::map<std::string, std::vector<Judgment>> accepted;
        std::map<std::string, std::size_t> reserved;
        Rng rng;
    };
    struct Worker {
        Qualification status = Qualification::unqualified;
        bool attempted = false;
        std::set<std::pair<std::string, std::string>> seen; // (campaign, pair id)
    };

    Campaign &campaign_ref(const std::string &id);
    const Campaign &campaign_ref(const std::string &id) const;
    Worker &worker_ref(const std::string &id);
    void release(PendingBlock &pending);
    void expire_blocks(Campaign &c);
    void accept(PendingBlock &pending, const std::vector<ItemResponse> &responses);

    mutable std::mutex mutex_;
    BatteryFile batteries_;
    std::vector<GoldPair> qualification_;
    std::vector<GoldPair> attention_;
    Rng rng_;
    std::map<std::string, Worker> workers_;
    std::map<std::string, std::string> tokens_; // token -> worker
    std::map<std::string, Campaign> campaigns_;
    std::map<std::string, PendingBlock> blocks_;
    std::uint64_t next_block_ = 1;
};

// Cryptographically random hex string.
std::string random_token(std::size_t bytes = 24);

} // namespace fairpairs
