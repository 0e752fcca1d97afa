// Submission flow: one POST per rating; duplicates are fine (already
// recorded server-side), invalid rows are surfaced per item, and network
// failures stay queued so the drafts survive for a retry.

import { ApiClient } from './api.js'
import { TaskView, clearSavedDrafts, StorageLike } from './state.js'
import { RatingBody } from './types.js'

export interface SubmitOutcome {
  created: number
  duplicates: number
  invalid: { item_ref: number | null; errors: { field: string; error: string }[] }[]
  pending: RatingBody[]
}

export function allSettled(outcome: SubmitOutcome): boolean {
  return outcome.pending.length === 0 && outcome.invalid.length === 0
}

export async function submitTask(
  client: ApiClient,
  view: TaskView,
  annotatorId: string,
  storage?: StorageLike,
  retryQueue: RatingBody[] = [],
): Promise<SubmitOutcome> {
  const bodies = [...retryQueue, ...view.toRatingBodies(annotatorId)]
  const seen = new Set<string>()
  const outcome: SubmitOutcome = { created: 0, duplicates: 0, invalid: [], pending: [] }
  for (const body of bodies) {
    const key = `${body.task_id}:${body.item_ref}`
    if (seen.has(key)) continue
    seen.add(key)
    const result = await client.submitRating(body)
    if (result.status === 'created') outcome.created += 1
    else if (result.status === 'duplicate') outcome.duplicates += 1
    else if (result.status === 'invalid') outcome.invalid.push({ item_ref: body.item_ref, errors: result.errors ?? [] })
    else outcome.pending.push(body)
  }
  if (allSettled(outcome)) {
    view.clearDrafts()
    if (storage) clearSavedDrafts(storage, view.task.task_id)
  }
  return outcome
}
