from lxml import etree

from app.common.errors import TraceError

XML_DECLARATION = '<?xml version="1.0" encoding="UTF-8"?>'


class MalformedXml(TraceError):
    pass


class NonCanonical(TraceError):
    pass


def hardened_parser() -> etree.XMLParser:
    # no DTD loading, no entity expansion, no network
    return etree.XMLParser(
        resolve_entities=False,
        no_network=True,
        load_dtd=False,
        remove_comments=False,
        remove_blank_text=False,
    )


def set_text(element: etree._Element, value: str | None) -> None:
    # пустая строка -> самозакрывающийся элемент, при разборе читается как ""
    element.text = value if value else None


def serialize_element(root: etree._Element) -> bytes:
    """
    Renders an element tree in the canonical layout: declaration line,
    2-space indent, one element per line, LF endings, trailing LF.

    Raises ValueError when a value holds characters XML cannot carry.
    """
    body = etree.tostring(root, pretty_print=True, encoding="unicode")
    return (XML_DECLARATION + "\n" + body).encode("utf-8")


def parse_xml(data: bytes) -> etree._Element:
    try:
        return etree.fromstring(data, hardened_parser())
    except etree.XMLSyntaxError as exc:
        raise MalformedXml(str(exc)) from exc


def child_text(root: etree._Element, tag: str) -> str | None:
    element = root.find(tag)
    if element is None:
        return None
    return element.text or ""
