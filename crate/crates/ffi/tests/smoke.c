#include <stdio.h>
#include <string.h>

#include "semzip.h"

#define CHECK(cond)                                                  \
    do {                                                             \
        if (!(cond)) {                                               \
            const char *e = semzip_last_error();                     \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, \
                    #cond, e ? e : "no error");                      \
            return 1;                                                \
        }                                                            \
    } while (0)

int main(void) {
    const char *atoms =
        "[{\"type\":\"constraint\",\"subject\":\"rental_car\",\"predicate\":\"allowed\","
        "\"value\":false,\"modality\":\"must\",\"scope\":\"task\"}]";
    SemzipCodec *codec = semzip_codec_new();
    char *payload = NULL;
    char *json = NULL;

    CHECK(semzip_render(codec, atoms, "szip_ascii", &payload) == SEMZIP_STATUS_OK);
    CHECK(strstr(payload, "!car") != NULL);
    CHECK(semzip_parse(codec, payload, "szip_ascii", &json) == SEMZIP_STATUS_OK);
    CHECK(strstr(json, "rental_car") != NULL);
    semzip_string_free(payload);
    semzip_string_free(json);

    CHECK(semzip_render(codec, atoms, "morse", &payload) == SEMZIP_STATUS_INVALID_ARGUMENT);
    CHECK(semzip_last_error() != NULL);

    semzip_codec_free(codec);
    printf("ok\n");
    return 0;
}
