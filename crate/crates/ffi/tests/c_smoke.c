#include <stdio.h>
#include <string.h>
#include "gridemail.h"

#define CHECK(expr) do { GeStatus s_ = (expr); if (s_ != GE_STATUS_OK) { \
    fprintf(stderr, "%s -> %d: %s\n", #expr, (int)s_, ge_last_error_message()); return 1; } } while (0)

int main(void) {
    GeSimConfig *cfg = NULL;
    CHECK(ge_sim_config_new(1.0 / 60.0, 7, 50, &cfg));
    double analytic = 0;
    CHECK(ge_analytic_net_benefit(cfg, "time_cap", &analytic));
    GeSimResult res;
    CHECK(ge_simulate(cfg, "accept_all", &res));
    ge_sim_config_free(cfg);

    GeLedger *ledger = NULL;
    CHECK(ge_ledger_new_in_memory(&ledger));
    char *tok = NULL;
    CHECK(ge_ledger_issue(ledger, "alice", 3.0, &tok));
    double amount = 0;
    CHECK(ge_ledger_redeem(ledger, tok, 3.0, "bob", &amount));
    GeStatus again = ge_ledger_redeem(ledger, tok, 3.0, "bob", &amount);
    ge_string_free(tok);
    ge_ledger_free(ledger);

    const char *wire = "QUOTE cos2 2.5 AVAILABLE\r\n";
    GeFrame *frame = NULL;
    CHECK(ge_frame_decode((const uint8_t *)wire, strlen(wire), &frame));
    char *verb = NULL;
    CHECK(ge_frame_verb(frame, &verb));
    GeBytes bytes = {0};
    CHECK(ge_frame_encode(frame, &bytes));
    int same = bytes.len == strlen(wire) && memcmp(bytes.data, wire, bytes.len) == 0;
    ge_bytes_free(&bytes);
    ge_frame_free(frame);

    printf("analytic=%.1f replications=%llu amount=%.1f again=%d verb=%s same=%d\n", analytic,
           (unsigned long long)res.replications, amount, (int)again, verb, same);
    ge_string_free(verb);
    return 0;
}
