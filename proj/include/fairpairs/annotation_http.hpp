#pragma once

// JSON-over-HTTP front of AnnotationService, all routes under /api/v1.
//
//   GET  /api/v1/battery                        shared battery definition (no auth)
//   POST /api/v1/workers                  admin {worker_id} -> {token}
//   GET  /api/v1/qualification            worker
//   POST /api/v1/qualification            worker {answers: [option, ...]}
//   POST /api/v1/campaigns                admin {id, pairs | pairs_path, votes_per_pair, battery, seed}
//   POST /api/v1/campaigns/:id/close      admin
//   GET  /api/v1/campaigns/:id/next-block worker
//   POST /api/v1/blocks/:id               worker {responses: [{answers: {key: option}, explanation}]}
//   GET  /api/v1/review                   admin
//   POST /api/v1/review/:id/approve       admin
//   POST /api/v1/review/:id/reject        admin
//   GET  /api/v1/campaigns/:id/export     admin, LabelStore JSONL
//   GET  /api/v1/campaigns/:id/rates      admin
//
// Authentication is "Authorization: Bearer <token>".

#include <memory>
#include <string>

#include "fairpairs/annotation_service.hpp"

namespace httplib {
class Server;
}

namespace fairpairs {

class AnnotationServer {
  public:
    AnnotationServer(AnnotationService &service, std::string admin_token);
    ~AnnotationServer();

    // Blocks until stop() is called. Returns false if the socket could not be bound.
    bool listen(const std::string &host, int port);
    // Binds to a free port and returns it; serve with listen_after_bind().
    int bind_any_port(const std::string &host);
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

  private:
    void routes();

    AnnotationService &service_;
    std::string admin_token_;
    std::unique_ptr<httplib::Server> server_;
};

} // namespace fairpairs
