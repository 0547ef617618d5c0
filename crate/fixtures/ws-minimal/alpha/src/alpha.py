def shortest(graph, source):
    dist = {source: 0}
    frontier = [source]

    while frontier:
        node = frontier.pop(0)
        for nxt, w in graph.get(node, []):
            if nxt not in dist or dist[node] + w < dist[nxt]:
                dist[nxt] = dist[node] + w
                frontier.append(nxt)

    return dist
