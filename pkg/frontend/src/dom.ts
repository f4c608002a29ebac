import type { VNode } from "./view";

/** Realize a virtual node in the browser DOM. */
export function toElement(node: VNode, doc: Document): HTMLElement {
  const element = doc.createElement(node.tag);
  for (const [name, value] of Object.entries(node.attrs)) {
    element.setAttribute(name, value);
  }
  for (const child of node.children) {
    if (typeof child === "string") {
      element.appendChild(doc.createTextNode(child));
    } else {
      element.appendChild(toElement(child, doc));
    }
  }
  return element;
}

/** Full re-render into a container; state is small enough to keep it simple. */
export function mount(container: HTMLElement, node: VNode): void {
  const doc = container.ownerDocument;
  container.replaceChildren(toElement(node, doc));
}
