// Minimal Markdown renderer that is safe by construction: every piece of
// input text passes through escapeHtml before it reaches the output string,
// and the only markup emitted is a fixed whitelist of tags with fixed
// attributes. Raw HTML in the input is therefore always displayed, never
// interpreted, which makes the sanitization total rather than a filter.

const ENTITIES: Record<string, string> = {
  '&': '&amp;',
  '<': '&lt;',
  '>': '&gt;',
  '"': '&quot;',
  "'": '&#39;',
};

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => ENTITIES[ch] as string);
}

// Allow http(s), mailto, and scheme-less (relative/fragment) targets.
// Control characters and whitespace are stripped before the scheme check
// because browsers strip them too ("java\nscript:" is executable).
export function isSafeUrl(url: string): boolean {
  const cleaned = url.replace(/[\u0000-\u0020]+/g, '').toLowerCase();
  const scheme = /^([a-z][a-z0-9+.-]*):/.exec(cleaned);
  if (scheme === null) return true;
  return scheme[1] === 'http' || scheme[1] === 'https' || scheme[1] === 'mailto';
}

const INLINE = /(`+)([^`]+)\1|\[([^\]]*)\]\(([^)\s]*)\)|\*\*([^*]+)\*\*|\*([^*]+)\*/g;

function renderLink(text: string, url: string): string {
  if (!isSafeUrl(url)) return escapeHtml(text); // neutralized: plain text, no anchor
  return `<a href="${escapeHtml(url)}" rel="noopener noreferrer" target="_blank">${escapeHtml(text)}</a>`;
}

export function renderInline(raw: string): string {
  let out = '';
  let last = 0;
  for (const match of raw.matchAll(INLINE)) {
    out += escapeHtml(raw.slice(last, match.index));
    if (match[2] !== undefined) out += `<code>${escapeHtml(match[2])}</code>`;
    else if (match[4] !== undefined) out += renderLink(match[3] ?? '', match[4]);
    else if (match[5] !== undefined) out += `<strong>${escapeHtml(match[5])}</strong>`;
    else out += `<em>${escapeHtml(match[6] ?? '')}</em>`;
    last = (match.index ?? 0) + match[0].length;
  }
  return out + escapeHtml(raw.slice(last));
}

function renderParagraph(lines: string[]): string {
  return `<p>${lines.map(renderInline).join('<br>')}</p>`;
}

// Chat bubbles scale headings down: # is a section inside an answer, not a
// page title.
function headingTag(level: number): string {
  return `h${Math.min(level + 2, 6)}`;
}

export function renderMarkdown(raw: string): string {
  const out: string[] = [];
  const lines = raw.split('\n');
  let i = 0;
  while (i < lines.length) {
    const line = lines[i] as string;
    if (line.trim() === '') {
      i += 1;
      continue;
    }
    if (line.startsWith('```')) {
      const code: string[] = [];
      i += 1;
      while (i < lines.length && !(lines[i] as string).startsWith('```')) {
        code.push(lines[i] as string);
        i += 1;
      }
      i += 1; // closing fence (or end of input)
      out.push(`<pre><code>${escapeHtml(code.join('\n'))}</code></pre>`);
      continue;
    }
    const heading = /^(#{1,6})\s+(.*)$/.exec(line);
    if (heading !== null) {
      const tag = headingTag((heading[1] as string).length);
      out.push(`<${tag}>${renderInline(heading[2] ?? '')}</${tag}>`);
      i += 1;
      continue;
    }
    if (/^[-*]\s+/.test(line)) {
      const items: string[] = [];
      while (i < lines.length && /^[-*]\s+/.test(lines[i] as string)) {
        items.push((lines[i] as string).replace(/^[-*]\s+/, ''));
        i += 1;
      }
      out.push(`<ul>${items.map((item) => `<li>${renderInline(item)}</li>`).join('')}</ul>`);
      continue;
    }
    const paragraph: string[] = [];
    while (i < lines.length) {
      const current = lines[i] as string;
      if (current.trim() === '' || current.startsWith('```') || /^(#{1,6})\s/.test(current) || /^[-*]\s+/.test(current)) {
        break;
      }
      paragraph.push(current);
      i += 1;
    }
    out.push(renderParagraph(paragraph));
  }
  return out.join('');
}
