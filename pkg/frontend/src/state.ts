// Task view-model: local draft ratings keyed by (dimension, item_ref),
// submittable only once every item has a valid value.

import { AnnotationTask, RatingBody, RatingValue, VQA_DIMENSION } from './types.js'

export function itemKey(dimension: string, itemRef: number | null): string {
  return `${dimension}:${itemRef === null ? '' : itemRef}`
}

export function isValidValue(dimension: string, value: RatingValue): boolean {
  if (dimension === VQA_DIMENSION) {
    return value === 'yes' || value === 'no'
  }
  return typeof value === 'number' && Number.isInteger(value) && value >= 1 && value <= 5
}

export class TaskView {
  readonly task: AnnotationTask
  private drafts = new Map<string, RatingValue>()

  constructor(task: AnnotationTask, savedDrafts?: Record<string, RatingValue>) {
    this.task = task
    if (savedDrafts) {
      for (const [key, value] of Object.entries(savedDrafts)) {
        if (isValidValue(task.dimension, value)) this.drafts.set(key, value)
      }
    }
  }

  setDraft(itemRef: number | null, value: RatingValue): void {
    if (!this.task.items.some((item) => item.item_ref === itemRef)) {
      throw new Error(`no item ${itemRef} in task ${this.task.task_id}`)
    }
    if (!isValidValue(this.task.dimension, value)) {
      throw new Error(`value ${String(value)} is not valid for ${this.task.dimension}`)
    }
    this.drafts.set(itemKey(this.task.dimension, itemRef), value)
  }

  draft(itemRef: number | null): RatingValue | undefined {
    return this.drafts.get(itemKey(this.task.dimension, itemRef))
  }

  clearDrafts(): void {
    this.drafts.clear()
  }

  /** A task is submittable only when every item carries a valid value. */
  isComplete(): boolean {
    return this.task.items.every((item) => this.draft(item.item_ref) !== undefined)
  }

  missingItems(): (number | null)[] {
    return this.task.items.filter((item) => this.draft(item.item_ref) === undefined).map((i) => i.item_ref)
  }

  toRatingBodies(annotatorId: string): RatingBody[] {
    if (!this.isComplete()) {
      throw new Error(`task ${this.task.task_id} incomplete: missing ${this.missingItems().join(', ')}`)
    }
    return this.task.items.map((item) => ({
      annotator_id: annotatorId,
      task_id: this.task.task_id,
      dimension: this.task.dimension,
      item_ref: item.item_ref,
      value: this.draft(item.item_ref) as RatingValue,
    }))
  }

  serializeDrafts(): Record<string, RatingValue> {
    return Object.fromEntries(this.drafts)
  }
}

// Draft persistence behind a minimal storage interface (localStorage in the
// browser, a plain object in tests) so reloads never lose work.

export interface StorageLike {
  getItem(key: string): string | null
  setItem(key: string, value: string): void
  removeItem(key: string): void
}

const DRAFT_PREFIX = 'annotation-draft:'

export function saveDrafts(storage: StorageLike, view: TaskView): void {
  storage.setItem(DRAFT_PREFIX + view.task.task_id, JSON.stringify(view.serializeDrafts()))
}

export function loadDrafts(storage: StorageLike, taskId: string): Record<string, RatingValue> | undefined {
  const raw = storage.getItem(DRAFT_PREFIX + taskId)
  if (raw === null) return undefined
  try {
    return JSON.parse(raw) as Record<string, RatingValue>
  } catch {
    return undefined
  }
}

export function clearSavedDrafts(storage: StorageLike, taskId: string): void {
  storage.removeItem(DRAFT_PREFIX + taskId)
}
