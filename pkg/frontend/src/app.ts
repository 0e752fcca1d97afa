// Browser entry: one task at a time, per-dimension batches, keyboard
// shortcuts 1-5 / Y / N, drafts in localStorage.

import { ApiClient } from './api.js'
import { TaskView, loadDrafts, saveDrafts } from './state.js'
import { submitTask, allSettled } from './submit.js'
import { AnnotationTask, RatingValue, VQA_DIMENSION } from './types.js'

interface AppConfig {
  baseUrl: string
  annotatorId: string
}

function el<K extends keyof HTMLElementTagNameMap>(tag: K, cls?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag)
  if (cls) node.className = cls
  if (text !== undefined) node.textContent = text
  return node
}

function renderImages(client: ApiClient, task: AnnotationTask, root: HTMLElement): void {
  const strip = el('div', 'image-strip')
  task.images.forEach((path, index) => {
    const frame = el('figure', 'panel-frame')
    const caption = el('figcaption', undefined, `panel ${index + 1}`)
    const img = el('img')
    img.alt = `story panel ${index + 1}`
    const attach = () => {
      img.src = client.imageUrl(path) + `#${Date.now()}`
    }
    img.onerror = () => {
      img.replaceWith(placeholder)
    }
    const placeholder = el('div', 'image-placeholder')
    placeholder.append(el('span', undefined, 'image failed to load'))
    const retry = el('button', undefined, 'retry')
    retry.onclick = () => {
      placeholder.replaceWith(img)
      attach()
    }
    placeholder.append(retry)
    attach()
    frame.append(img, caption)
    strip.append(frame)
  })
  root.append(strip)
}

function renderItems(view: TaskView, root: HTMLElement, onChange: () => void): void {
  const list = el('div', 'items')
  for (const item of view.task.items) {
    const row = el('div', 'item-row')
    if (item.question) row.append(el('p', 'question', item.question))
    const group = el('div', 'choices')
    const choices: RatingValue[] = view.task.dimension === VQA_DIMENSION ? ['yes', 'no'] : [1, 2, 3, 4, 5]
    for (const choice of choices) {
      const label = el('label')
      const input = el('input')
      input.type = 'radio'
      input.name = `item-${item.item_ref ?? 'overall'}`
      input.value = String(choice)
      input.checked = view.draft(item.item_ref) === choice
      input.onchange = () => {
        view.setDraft(item.item_ref, choice)
        onChange()
      }
      label.append(input, document.createTextNode(String(choice)))
      group.append(label)
    }
    row.append(group)
    list.append(row)
  }
  root.append(list)
}

export function renderTask(client: ApiClient, task: AnnotationTask, config: AppConfig, root: HTMLElement): TaskView {
  const view = new TaskView(task, loadDrafts(window.localStorage, task.task_id))
  root.replaceChildren()
  root.append(el('h2', undefined, `Story ${task.story_id}`))
  root.append(el('p', 'story-text', task.story_text))
  renderImages(client, task, root)
  const rubric = el('pre', 'rubric')
  rubric.textContent = task.rubric // server text, rendered verbatim
  root.append(rubric)

  const submit = el('button', 'submit', 'Submit ratings')
  const status = el('p', 'status', '')
  const refresh = () => {
    saveDrafts(window.localStorage, view)
    submit.disabled = !view.isComplete()
    status.textContent = view.isComplete() ? 'ready to submit' : `missing ${view.missingItems().length} answer(s)`
  }
  renderItems(view, root, refresh)
  submit.onclick = async () => {
    submit.disabled = true
    const outcome = await submitTask(client, view, config.annotatorId, window.localStorage)
    if (allSettled(outcome)) {
      status.textContent =
        outcome.duplicates > 0 ? 'already submitted; moving on' : `submitted ${outcome.created} rating(s)`
      root.dispatchEvent(new CustomEvent('task-done', { bubbles: true }))
    } else if (outcome.pending.length > 0) {
      status.textContent = 'network trouble; your answers are saved, try again'
      submit.disabled = false
    } else {
      status.textContent = `rejected: ${outcome.invalid.map((i) => i.errors.map((e) => e.error).join('; ')).join(' | ')}`
      submit.disabled = false
    }
  }
  root.append(submit, status)
  refresh()

  window.onkeydown = (event) => {
    const first = view.task.items.find((item) => view.draft(item.item_ref) === undefined) ?? view.task.items[0]
    if (!first) return
    if (view.task.dimension === VQA_DIMENSION) {
      if (event.key.toLowerCase() === 'y') view.setDraft(first.item_ref, 'yes')
      else if (event.key.toLowerCase() === 'n') view.setDraft(first.item_ref, 'no')
      else return
    } else if ('12345'.includes(event.key)) {
      view.setDraft(first.item_ref, Number(event.key))
    } else {
      return
    }
    renderTask(client, task, config, root)
  }
  return view
}

export async function start(config: AppConfig, root: HTMLElement): Promise<void> {
  const client = new ApiClient(config.baseUrl, (url, init) => window.fetch(url, init))
  const tasks = await client.fetchTasks(config.annotatorId)
  if (tasks.length === 0) {
    root.replaceChildren(el('p', undefined, 'no tasks left, thank you!'))
    return
  }
  let index = 0
  const showNext = () => {
    const task = tasks[index]
    if (!task) {
      root.replaceChildren(el('p', undefined, 'all tasks completed, thank you!'))
      return
    }
    renderTask(client, task, config, root)
  }
  root.addEventListener('task-done', () => {
    index += 1
    showNext()
  })
  showNext()
}
