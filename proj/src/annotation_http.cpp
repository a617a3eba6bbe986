#include "fairpairs/annotation_http.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "fairpairs/text.hpp"

namespace fairpairs {

namespace {

constexpr const char *kJson = "application/json";

void reply(httplib::Response &res, int status, const json &body) {
    res.status = status;
    res.set_content(body.dump(), kJson);
}

std::string bearer(const httplib::Request &req) {
    const auto h = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (h.rfind(prefix, 0) != 0) return {};
    return h.substr(prefix.size());
}

json body_json(const httplib::Request &req) {
    if (req.body.empty()) return json::object();
    return json::parse(req.body);
}

} // namespace

AnnotationServer::AnnotationServer(AnnotationService &service, std::string admin_token)
    : service_(service), admin_token_(std::move(admin_token)), server_(std::make_unique<httplib::Server>()) {
    if (admin_token_.empty()) throw PreconditionError("admin token must not be empty");
    routes();
}

AnnotationServer::~AnnotationServer() = default;

bool AnnotationServer::listen(const std::string &host, int port) { return server_->listen(host, port); }
int AnnotationServer::bind_any_port(const std::string &host) { return server_->bind_to_any_port(host); }
bool AnnotationServer::listen_after_bind() { return server_->listen_after_bind(); }
void AnnotationServer::stop() { server_->stop(); }
void AnnotationServer::wait_until_ready() const { server_->wait_until_ready(); }

void AnnotationServer::routes() {
    auto &s = *server_;
    using Handler = std::function<void(const httplib::Request &, httplib::Response &)>;

    // Wraps a handler with error mapping.
    auto guarded = [](Handler h) {
        return [h = std::move(h)](const httplib::Request &req, httplib::Response &res) {
            try {
                h(req, res);
            } catch (const json::exception &e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const FormatError &e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const PreconditionError &e) {
                reply(res, 409, {{"error", e.what()}});
            } catch (const std::exception &e) {
                spdlog::error("annotation server: {}", e.what());
                reply(res, 500, {{"error", e.what()}});
            }
        };
    };
    auto admin = [this, guarded](Handler h) {
        return guarded([this, h = std::move(h)](const httplib::Request &req, httplib::Response &res) {
            if (bearer(req) != admin_token_) return reply(res, 401, {{"error", "admin token required"}});
            h(req, res);
        });
    };
    using WorkerHandler = std::function<void(const std::string &, const httplib::Request &, httplib::Response &)>;
    auto worker = [this, guarded](WorkerHandler h) {
        return guarded([this, h = std::move(h)](const httplib::Request &req, httplib::Response &res) {
            const auto w = service_.worker_for_token(bearer(req));
            if (!w) return reply(res, 401, {{"error", "worker token required"}});
            h(*w, req, res);
        });
    };

    s.Get("/api/v1/battery", guarded([this](const httplib::Request &, httplib::Response &res) {
              reply(res, 200, service_.batteries().raw);
          }));

    s.Post("/api/v1/workers", admin([this](const httplib::Request &req, httplib::Response &res) {
               const auto id = body_json(req).at("worker_id").get<std::string>();
               reply(res, 201, {{"worker_id", id}, {"token", service_.register_worker(id)}});
           }));

    s.Get("/api/v1/qualification", worker([this](const std::string &w, const httplib::Request &, httplib::Response &res) {
              json items = json::array();
              for (const auto &it : service_.qualification_items()) items.push_back(it.client_json());
              const auto &b = service_.batteries().get("fairness_only");
              reply(res, 200, {{"worker", w}, {"question", b.question(b.fairness_question).text},
                               {"options", b.question(b.fairness_question).options}, {"items", items}});
          }));

    s.Post("/api/v1/qualification", worker([this](const std::string &w, const httplib::Request &req, httplib::Response &res) {
               const auto answers = body_json(req).at("answers").get<std::vector<std::size_t>>();
               reply(res, 200, {{"status", to_string(service_.submit_qualification(w, answers))}});
           }));

    s.Post("/api/v1/campaigns", admin([this](const httplib::Request &req, httplib::Response &res) {
               const auto b = body_json(req);
               CampaignConfig c;
               c.id = b.at("id").get<std::string>();
               c.votes_per_pair = b.value("votes_per_pair", c.votes_per_pair);
               c.battery = b.value("battery", c.battery);
               c.seed = b.value("seed", c.seed);
               if (b.contains("pairs")) {
                   for (const auto &p : b.at("pairs")) c.pairs.push_back(PairCandidate::from_json(p));
               } else {
                   c.pairs = read_pairs(b.at("pairs_path").get<std::string>());
               }
               const auto n = c.pairs.size();
               service_.create_campaign(std::move(c));
               reply(res, 201, {{"id", b.at("id")}, {"pairs", n}});
           }));

    s.Post(R"(/api/v1/campaigns/([^/]+)/close)", admin([this](const httplib::Request &req, httplib::Response &res) {
               service_.close_campaign(req.matches[1]);
               reply(res, 200, {{"closed", std::string(req.matches[1])}});
           }));

    s.Get(R"(/api/v1/campaigns/([^/]+)/next-block)",
          worker([this](const std::string &w, const httplib::Request &req, httplib::Response &res) {
              const std::string campaign = req.matches[1];
              const auto block = service_.next_block(campaign, w);
              reply(res, 200, block.client_json(service_.batteries().get(service_.campaign_battery(campaign))));
          }));

    s.Post(R"(/api/v1/blocks/([^/]+))", worker([this](const std::string &w, const httplib::Request &req, httplib::Response &res) {
               const auto b = body_json(req);
               std::vector<ItemResponse> responses;
               for (const auto &r : b.at("responses")) {
                   ItemResponse ir;
                   ir.answers = r.at("answers").get<std::map<std::string, std::size_t>>();
                   if (r.contains("explanation") && !r.at("explanation").is_null())
                       ir.explanation = r.at("explanation").get<std::string>();
                   responses.push_back(std::move(ir));
               }
               reply(res, 200, {{"outcome", to_string(service_.submit_block(w, req.matches[1], responses))}});
           }));

    s.Get("/api/v1/review", admin([this](const httplib::Request &, httplib::Response &res) {
              json out = json::array();
              for (const auto &e : service_.review_queue())
                  out.push_back({{"block_id", e.block_id}, {"campaign", e.campaign}, {"worker", e.worker}, {"reasons", e.reasons}});
              reply(res, 200, out);
          }));

    s.Post(R"(/api/v1/review/([^/]+)/(approve|reject))", admin([this](const httplib::Request &req, httplib::Response &res) {
               const bool approve = req.matches[2] == "approve";
               service_.review(req.matches[1], approve);
               reply(res, 200, {{"block_id", std::string(req.matches[1])}, {"approved", approve}});
           }));

    s.Get(R"(/api/v1/campaigns/([^/]+)/export)", admin([this](const httplib::Request &req, httplib::Response &res) {
              const auto ex = service_.export_campaign(req.matches[1]);
              res.status = 200;
              if (!ex.unlabeled.empty()) res.set_header("X-Unlabeled-Pairs", std::to_string(ex.unlabeled.size()));
              res.set_content(ex.label_store_jsonl, "application/x-ndjson");
          }));

    s.Get(R"(/api/v1/campaigns/([^/]+)/rates)", admin([this](const httplib::Request &req, httplib::Response &res) {
              reply(res, 200, service_.question_rates(req.matches[1]));
          }));
}

} // namespace fairpairs
