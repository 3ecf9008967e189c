#ifndef MUSPY_H
#define MUSPY_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum {
  /**
   * Velocity tokens, no end-of-sequence token (388 ids).
   */
  MUSPY_EVENT_PRESET_DEFAULT = 0,
  /**
   * No velocity, end-of-sequence token (357 ids).
   */
  MUSPY_EVENT_PRESET_EXPERIMENT = 1,
} MuspyEventPreset;

/**
 * Input/output file format; `Auto` infers it from the file extension.
 */
typedef enum {
  MUSPY_FORMAT_AUTO = 0,
  MUSPY_FORMAT_MIDI = 1,
  MUSPY_FORMAT_MUSICXML = 2,
  MUSPY_FORMAT_MXL = 3,
  MUSPY_FORMAT_ABC = 4,
  MUSPY_FORMAT_JSON = 5,
} MuspyFormat;

typedef enum {
  MUSPY_OVERLAP_POLICY_ERROR = 0,
  MUSPY_OVERLAP_POLICY_KEEP_HIGHEST = 1,
  MUSPY_OVERLAP_POLICY_SKIP_NEW = 2,
} MuspyOverlapPolicy;

/**
 * Result of every call.
 */
typedef enum {
  MUSPY_STATUS_OK = 0,
  MUSPY_STATUS_NULL_ARGUMENT = 1,
  MUSPY_STATUS_INVALID_ARGUMENT = 2,
  MUSPY_STATUS_IO = 3,
  MUSPY_STATUS_PARSE = 4,
  MUSPY_STATUS_SCHEMA = 5,
  MUSPY_STATUS_VALIDATION = 6,
  MUSPY_STATUS_FORMAT = 7,
  MUSPY_STATUS_UNSUPPORTED = 8,
  MUSPY_STATUS_DOMAIN = 9,
  MUSPY_STATUS_RANGE = 10,
  MUSPY_STATUS_POLYPHONY = 11,
  MUSPY_STATUS_OTHER = 12,
  MUSPY_STATUS_PANIC = 13,
} MuspyStatus;

/**
 * Opaque music handle.
 */
typedef struct MuspyMusic MuspyMusic;

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful call. Valid until the next call on the same thread.
 */
const char *muspy_last_error_message(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *muspy_version(void);

/**
 * Reads song number `tune` (0 for single-song formats) from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
MuspyStatus muspy_read_file(const char *path, MuspyFormat format, size_t tune, MuspyMusic **out);

/**
 * Reads song number `tune` from an in-memory file. `format` must not be
 * `Auto`.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
MuspyStatus muspy_read_bytes(const uint8_t *data,
                             size_t len,
                             MuspyFormat format,
                             size_t tune,
                             MuspyMusic **out);

/**
 * Parses a canonical JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
MuspyStatus muspy_load_json(const char *json, MuspyMusic **out);

/**
 * Serializes to a canonical JSON document; free it with
 * `muspy_string_free`.
 *
 * # Safety
 * `music` must be a live handle; `out` must be writable.
 */
MuspyStatus muspy_save_json(const MuspyMusic *music_, char **out);

/**
 * Writes to a file; the format is inferred from the extension for `Auto`.
 *
 * # Safety
 * `music` must be a live handle; `path` a NUL-terminated string.
 */
MuspyStatus muspy_write_file(const MuspyMusic *music_, const char *path, MuspyFormat format);

/**
 * Encodes as a Standard MIDI File; free with `muspy_bytes_free`.
 *
 * # Safety
 * `music` must be a live handle; `out_data` and `out_len` writable.
 */
MuspyStatus muspy_write_midi(const MuspyMusic *music_, uint8_t **out_data, size_t *out_len);

/**
 * All metrics with default parameters as a JSON object; free with
 * `muspy_string_free`.
 *
 * # Safety
 * `music` must be a live handle; `out` must be writable.
 */
MuspyStatus muspy_metrics_json(const MuspyMusic *music_, char **out);

/**
 * Event tokens; free with `muspy_tokens_free`.
 *
 * # Safety
 * `music` must be a live handle; `out_tokens` and `out_len` writable.
 */
MuspyStatus muspy_encode_event(const MuspyMusic *music_,
                               MuspyEventPreset preset,
                               uint32_t **out_tokens,
                               size_t *out_len);

/**
 * Pitch tokens (one per tick); free with `muspy_tokens_free`.
 *
 * # Safety
 * `music` must be a live handle; `out_tokens` and `out_len` writable.
 */
MuspyStatus muspy_encode_pitch(const MuspyMusic *music_,
                               MuspyOverlapPolicy policy,
                               uint32_t **out_tokens,
                               size_t *out_len);

/**
 * Ticks per quarter note, or 0 for a NULL handle.
 *
 * # Safety
 * `music` must be NULL or a live handle.
 */
uint32_t muspy_music_resolution(const MuspyMusic *music_);

/**
 * # Safety
 * `music` must be NULL or a live handle.
 */
size_t muspy_music_track_count(const MuspyMusic *music_);

/**
 * # Safety
 * `music` must be NULL or a live handle.
 */
size_t muspy_music_note_count(const MuspyMusic *music_);

/**
 * End of the last note in ticks.
 *
 * # Safety
 * `music` must be NULL or a live handle.
 */
uint64_t muspy_music_end_time(const MuspyMusic *music_);

/**
 * # Safety
 * `music` must be NULL or a handle not yet freed.
 */
void muspy_music_free(MuspyMusic *music_);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void muspy_string_free(char *s);

/**
 * # Safety
 * `data`/`len` must be NULL/any or exactly as returned by this library.
 */
void muspy_bytes_free(uint8_t *data, size_t len);

/**
 * # Safety
 * `tokens`/`len` must be NULL/any or exactly as returned by this library.
 */
void muspy_tokens_free(uint32_t *tokens, size_t len);

#endif  /* MUSPY_H */
